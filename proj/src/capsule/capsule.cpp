#include "capsed/capsule.hpp"

#include <Eigen/Core>
#include <cmath>
#include <ostream>

namespace capsed {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedConst = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
using Strided = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

Tensor with_batch_axis(const Tensor& t, std::size_t unbatched_rank) {
  if (t.rank() == unbatched_rank) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    return reshape(t, std::move(s));
  }
  return t;
}

}  // namespace

void MarginLossParams::validate() const {
  if (!(0.0 < m_minus && m_minus < m_plus && m_plus < 1.0)) {
    throw std::invalid_argument("margin loss requires 0 < m_minus < m_plus < 1");
  }
  if (!(lambda > 0.0)) throw std::invalid_argument("margin loss requires lambda > 0");
}

Tensor squash(const Tensor& s) {
  if (s.rank() == 0) throw ShapeError("squash: capsule axis missing");
  const std::size_t d = s.shape().back();
  const std::size_t rows = s.numel() / d;
  auto x = s.data();
  std::vector<double> out(s.numel());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t k = 0; k < d; ++k) ss += x[r * d + k] * x[r * d + k];
    const double n = std::sqrt(ss + kNormEpsilon);
    norms[r] = n;
    const double factor = n / (1.0 + n * n);
    for (std::size_t k = 0; k < d; ++k) out[r * d + k] = x[r * d + k] * factor;
  }
  return Tensor::record(s.shape(), std::move(out), {s},
                        [s, d, rows, norms = std::move(norms)](std::span<const double> g, GradInputs gi) {
                          auto x = s.data();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const double n = norms[r];
                            const double n2 = n * n;
                            const double factor = n / (1.0 + n2);
                            const double dfactor = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2));
                            double dot = 0.0;
                            for (std::size_t k = 0; k < d; ++k) dot += g[r * d + k] * x[r * d + k];
                            const double radial = dfactor * dot / n;
                            for (std::size_t k = 0; k < d; ++k)
                              gi[0][r * d + k] += factor * g[r * d + k] + radial * x[r * d + k];
                          }
                        });
}

Tensor predict_vectors(const Tensor& u, const Tensor& weights) {
  if (weights.rank() != 4) throw ShapeError("predict_vectors: weights must be [N_low x N_high x d_high x d_low]");
  const bool batched = u.rank() == 3;
  if (u.rank() != 2 && !batched) throw ShapeError("predict_vectors: capsules must be rank 2 or 3");
  const std::size_t n = batched ? u.dim(0) : 1;
  const std::size_t low = u.dim(batched ? 1 : 0);
  const std::size_t dl = u.dim(batched ? 2 : 1);
  const std::size_t high = weights.dim(1);
  const std::size_t dh = weights.dim(2);
  if (weights.dim(0) != low || weights.dim(3) != dl) {
    throw ShapeError("predict_vectors: capsules " + to_string(u.shape()) + " incompatible with weights " +
                     to_string(weights.shape()));
  }
  const std::size_t rows = high * dh;
  Shape out_shape = batched ? Shape{n, low, high, dh} : Shape{low, high, dh};
  std::vector<double> out(n * low * rows);
  const double* up = u.data().data();
  const double* wp = weights.data().data();
  for (std::size_t i = 0; i < low; ++i) {
    StridedConst ui(up + i * dl, n, dl, Eigen::OuterStride<>(low * dl));
    ConstMap wi(wp + i * rows * dl, rows, dl);
    Strided oi(out.data() + i * rows, n, rows, Eigen::OuterStride<>(low * rows));
    oi.noalias() = ui * wi.transpose();
  }
  return Tensor::record(
      std::move(out_shape), std::move(out), {u, weights},
      [u, weights, n, low, dl, rows](std::span<const double> g, GradInputs gi) {
        const double* up = u.data().data();
        const double* wp = weights.data().data();
        for (std::size_t i = 0; i < low; ++i) {
          StridedConst gout(g.data() + i * rows, n, rows, Eigen::OuterStride<>(low * rows));
          if (gi[0]) {
            Strided du(gi[0] + i * dl, n, dl, Eigen::OuterStride<>(low * dl));
            du.noalias() += gout * ConstMap(wp + i * rows * dl, rows, dl);
          }
          if (gi[1]) {
            Map dw(gi[1] + i * rows * dl, rows, dl);
            dw.noalias() += gout.transpose() * StridedConst(up + i * dl, n, dl, Eigen::OuterStride<>(low * dl));
          }
        }
      });
}

Tensor coupled_sum(const Tensor& couplings, const Tensor& predictions) {
  if (predictions.rank() != 4 || couplings.rank() != 3 || couplings.dim(0) != predictions.dim(0) ||
      couplings.dim(1) != predictions.dim(1) || couplings.dim(2) != predictions.dim(2)) {
    throw ShapeError("coupled_sum: couplings " + to_string(couplings.shape()) + " vs predictions " +
                     to_string(predictions.shape()));
  }
  const std::size_t n = predictions.dim(0), low = predictions.dim(1), high = predictions.dim(2),
                    d = predictions.dim(3);
  auto c = couplings.data();
  auto p = predictions.data();
  std::vector<double> out(n * high * d, 0.0);
  for (std::size_t f = 0; f < n; ++f)
    for (std::size_t i = 0; i < low; ++i)
      for (std::size_t j = 0; j < high; ++j) {
        const double cij = c[(f * low + i) * high + j];
        const double* pij = p.data() + ((f * low + i) * high + j) * d;
        double* sj = out.data() + (f * high + j) * d;
        for (std::size_t k = 0; k < d; ++k) sj[k] += cij * pij[k];
      }
  return Tensor::record({n, high, d}, std::move(out), {couplings, predictions},
                        [couplings, predictions, n, low, high, d](std::span<const double> g, GradInputs gi) {
                          auto c = couplings.data();
                          auto p = predictions.data();
                          for (std::size_t f = 0; f < n; ++f)
                            for (std::size_t i = 0; i < low; ++i)
                              for (std::size_t j = 0; j < high; ++j) {
                                const std::size_t ij = (f * low + i) * high + j;
                                const double* gj = g.data() + (f * high + j) * d;
                                if (gi[0]) {
                                  double acc = 0.0;
                                  for (std::size_t k = 0; k < d; ++k) acc += gj[k] * p[ij * d + k];
                                  gi[0][ij] += acc;
                                }
                                if (gi[1]) {
                                  for (std::size_t k = 0; k < d; ++k) gi[1][ij * d + k] += c[ij] * gj[k];
                                }
                              }
                        });
}

Tensor agreement(const Tensor& predictions, const Tensor& outputs) {
  if (predictions.rank() != 4 || outputs.rank() != 3 || outputs.dim(0) != predictions.dim(0) ||
      outputs.dim(1) != predictions.dim(2) || outputs.dim(2) != predictions.dim(3)) {
    throw ShapeError("agreement: predictions " + to_string(predictions.shape()) + " vs outputs " +
                     to_string(outputs.shape()));
  }
  const std::size_t n = predictions.dim(0), low = predictions.dim(1), high = predictions.dim(2),
                    d = predictions.dim(3);
  auto p = predictions.data();
  auto v = outputs.data();
  std::vector<double> out(n * low * high);
  for (std::size_t f = 0; f < n; ++f)
    for (std::size_t i = 0; i < low; ++i)
      for (std::size_t j = 0; j < high; ++j) {
        const std::size_t ij = (f * low + i) * high + j;
        const double* vj = v.data() + (f * high + j) * d;
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += p[ij * d + k] * vj[k];
        out[ij] = acc;
      }
  return Tensor::record({n, low, high}, std::move(out), {predictions, outputs},
                        [predictions, outputs, n, low, high, d](std::span<const double> g, GradInputs gi) {
                          auto p = predictions.data();
                          auto v = outputs.data();
                          for (std::size_t f = 0; f < n; ++f)
                            for (std::size_t i = 0; i < low; ++i)
                              for (std::size_t j = 0; j < high; ++j) {
                                const std::size_t ij = (f * low + i) * high + j;
                                const std::size_t jo = (f * high + j) * d;
                                if (gi[0])
                                  for (std::size_t k = 0; k < d; ++k) gi[0][ij * d + k] += g[ij] * v[jo + k];
                                if (gi[1])
                                  for (std::size_t k = 0; k < d; ++k) gi[1][jo + k] += g[ij] * p[ij * d + k];
                              }
                        });
}

RoutingResult route(const Tensor& predictions, std::size_t iterations, bool keep_trace) {
  if (iterations < 1) throw std::invalid_argument("route: at least one routing iteration is required");
  if (predictions.rank() != 3 && predictions.rank() != 4) {
    throw ShapeError("route: predictions must be [N_low x N_high x d] or [N x N_low x N_high x d]");
  }
  const bool unbatched = predictions.rank() == 3;
  const Tensor uhat = with_batch_axis(predictions, 3);
  const std::size_t n = uhat.dim(0), low = uhat.dim(1), high = uhat.dim(2), d = uhat.dim(3);

  RoutingResult result;
  Tensor snapshot = keep_trace ? uhat.detach() : Tensor();
  Tensor b = Tensor::zeros({n, low, high});
  Tensor v;
  for (std::size_t it = 1; it <= iterations; ++it) {
    Tensor c = softmax(b);
    v = squash(coupled_sum(c, uhat));
    if (keep_trace) result.trace.push_back({it, b.detach(), c.detach(), snapshot, v.detach()});
    if (it < iterations) b = add(b, agreement(uhat, v));
  }
  result.outputs = unbatched ? reshape(v, {high, d}) : v;
  return result;
}

Tensor capsule_lengths(const Tensor& capsules) { return vector_norm(capsules); }

Tensor margin_loss_terms(const Tensor& lengths, std::span<const double> targets,
                         const MarginLossParams& params) {
  params.validate();
  if (targets.size() != lengths.numel()) {
    throw ShapeError("margin_loss: " + std::to_string(targets.size()) + " targets for lengths " +
                     to_string(lengths.shape()));
  }
  auto x = lengths.data();
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double present = std::max(0.0, params.m_plus - x[k]);
    const double absent = std::max(0.0, x[k] - params.m_minus);
    out[k] = targets[k] * present * present + params.lambda * (1.0 - targets[k]) * absent * absent;
  }
  std::vector<double> t(targets.begin(), targets.end());
  return Tensor::record(lengths.shape(), std::move(out), {lengths},
                        [lengths, params, t = std::move(t)](std::span<const double> g, GradInputs gi) {
                          auto x = lengths.data();
                          for (std::size_t k = 0; k < x.size(); ++k) {
                            const double present = std::max(0.0, params.m_plus - x[k]);
                            const double absent = std::max(0.0, x[k] - params.m_minus);
                            gi[0][k] += g[k] * (-2.0 * t[k] * present +
                                                2.0 * params.lambda * (1.0 - t[k]) * absent);
                          }
                        });
}

Tensor margin_loss(const Tensor& lengths, std::span<const double> targets, const MarginLossParams& params) {
  return sum(margin_loss_terms(lengths, targets, params));
}

void write_routing_trace(std::ostream& os, const std::vector<RoutingState>& trace, std::size_t frame) {
  const auto precision = os.precision(12);
  os << "iteration\ti\tj\tb_ij\tc_ij\n";
  for (const auto& state : trace) {
    const std::size_t low = state.couplings.dim(1), high = state.couplings.dim(2);
    if (frame >= state.couplings.dim(0)) throw std::out_of_range("write_routing_trace: frame out of range");
    auto b = state.log_priors.data();
    auto c = state.couplings.data();
    for (std::size_t i = 0; i < low; ++i)
      for (std::size_t j = 0; j < high; ++j) {
        const std::size_t k = (frame * low + i) * high + j;
        os << state.iteration << '\t' << i << '\t' << j << '\t' << b[k] << '\t' << c[k] << '\n';
      }
  }
  os.precision(precision);
}

}  // namespace capsed
