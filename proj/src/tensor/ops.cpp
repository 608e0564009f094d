#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "capsed/tensor.hpp"

namespace capsed {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& a, Forward f, Derivative df) {
  auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return Tensor::record(a.shape(), std::move(out), {a},
                        [a, df](std::span<const double> g, GradInputs gi) {
                          auto x = a.data();
                          for (std::size_t i = 0; i < x.size(); ++i) gi[0][i] += g[i] * df(x[i]);
                        });
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::record(a.shape(), std::move(out), {a, b},
                        [](std::span<const double> g, GradInputs gi) {
                          for (double* dst : gi) {
                            if (!dst) continue;
                            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                          }
                        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::record(a.shape(), std::move(out), {a, b},
                        [](std::span<const double> g, GradInputs gi) {
                          if (gi[0])
                            for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                          if (gi[1])
                            for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] -= g[i];
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::record(a.shape(), std::move(out), {a, b},
                        [a, b](std::span<const double> g, GradInputs gi) {
                          auto x = a.data();
                          auto y = b.data();
                          if (gi[0])
                            for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * y[i];
                          if (gi[1])
                            for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] += g[i] * x[i];
                        });
}

Tensor scale(const Tensor& a, double factor) {
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return Tensor::record(a.shape(), std::move(out), {a},
                        [factor](std::span<const double> g, GradInputs gi) {
                          for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * factor;
                        });
}

Tensor add_scalar(const Tensor& a, double value) {
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + value;
  return Tensor::record(a.shape(), std::move(out), {a},
                        [](std::span<const double> g, GradInputs gi) {
                          for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                        });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  auto f = [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  };
  return unary(a, f, [f](double x) {
    double s = f(x);
    return s * (1.0 - s);
  });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](double x) {
        double t = std::tanh(x);
        return 1.0 - t * t;
      });
}

Tensor log(const Tensor& a) {
  for (double x : a.data()) {
    if (!(x > 0.0)) throw std::domain_error("log: input must be positive");
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lower bound exceeds upper bound");
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x) { return x >= lo && x <= hi ? 1.0 : 0.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return Tensor::record({m, n}, std::move(out), {a, b},
                        [a, b, m, k, n](std::span<const double> g, GradInputs gi) {
                          ConstMap dc(g.data(), m, n);
                          if (gi[0])
                            Map(gi[0], m, k).noalias() += dc * ConstMap(b.data().data(), k, n).transpose();
                          if (gi[1])
                            Map(gi[1], k, n).noalias() += ConstMap(a.data().data(), m, k).transpose() * dc;
                        });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 || weight.dim(1) != x.dim(1) ||
      bias.dim(0) != weight.dim(0)) {
    throw ShapeError("linear: incompatible shapes x=" + to_string(x.shape()) +
                     " weight=" + to_string(weight.shape()) + " bias=" + to_string(bias.shape()));
  }
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  std::vector<double> out(n * out_dim);
  Map y(out.data(), n, out_dim);
  y.noalias() = ConstMap(x.data().data(), n, in) * ConstMap(weight.data().data(), out_dim, in).transpose();
  Eigen::Map<const Eigen::RowVectorXd> bv(bias.data().data(), out_dim);
  y.rowwise() += bv;
  return Tensor::record(
      {n, out_dim}, std::move(out), {x, weight, bias},
      [x, weight, n, in, out_dim](std::span<const double> g, GradInputs gi) {
        ConstMap dy(g.data(), n, out_dim);
        if (gi[0]) Map(gi[0], n, in).noalias() += dy * ConstMap(weight.data().data(), out_dim, in);
        if (gi[1]) Map(gi[1], out_dim, in).noalias() += dy.transpose() * ConstMap(x.data().data(), n, in);
        if (gi[2]) Eigen::Map<Eigen::RowVectorXd>(gi[2], out_dim) += dy.colwise().sum();
      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::record(std::move(shape), std::move(out), {a},
                        [](std::span<const double> g, GradInputs gi) {
                          for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                        });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const std::size_t r = a.rank();
  if (axes.size() != r) throw ShapeError("permute: axes do not match rank of " + to_string(a.shape()));
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || seen[axes[i]]) throw ShapeError("permute: invalid axis list");
    seen[axes[i]] = true;
    out_shape[i] = a.dim(axes[i]);
  }
  const auto in_strides = strides_of(a.shape());
  // source offset for every destination element
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) src_stride[i] = in_strides[axes[i]];
  const std::size_t n = a.numel();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t dst = 0; dst < n; ++dst) {
    map[dst] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        src += src_stride[ax];
        break;
      }
      src -= src_stride[ax] * (out_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
  auto x = a.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[map[i]];
  return Tensor::record(std::move(out_shape), std::move(out), {a},
                        [map = std::move(map)](std::span<const double> g, GradInputs gi) {
                          for (std::size_t i = 0; i < g.size(); ++i) gi[0][map[i]] += g[i];
                        });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.rank() || length == 0 || start + length > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") invalid on axis " + std::to_string(axis) +
                     " of " + to_string(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t extent = a.dim(axis);
  auto x = a.data();
  std::vector<double> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = x.data() + (o * extent + start) * inner;
    std::copy(src, src + length * inner, out.data() + o * length * inner);
  }
  return Tensor::record(std::move(out_shape), std::move(out), {a},
                        [outer, inner, extent, start, length](std::span<const double> g, GradInputs gi) {
                          for (std::size_t o = 0; o < outer; ++o) {
                            double* dst = gi[0] + (o * extent + start) * inner;
                            const double* src = g.data() + o * length * inner;
                            for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
                          }
                        });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.dim(i) != first[i]) {
        throw ShapeError("concat: shape mismatch " + to_string(p.shape()) + " vs " + to_string(first));
      }
    }
    extents.push_back(p.dim(axis));
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t total = out_shape[axis];
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto x = parts[p].data();
    const std::size_t chunk = extents[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(x.data() + o * chunk, x.data() + (o + 1) * chunk,
                out.data() + (o * total + offset) * inner);
    }
    offset += extents[p];
  }
  return Tensor::record(
      std::move(out_shape), std::move(out), parts,
      [extents, outer, inner, total](std::span<const double> g, GradInputs gi) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < extents.size(); ++p) {
          const std::size_t chunk = extents[p] * inner;
          if (gi[p]) {
            for (std::size_t o = 0; o < outer; ++o) {
              const double* src = g.data() + (o * total + offset) * inner;
              double* dst = gi[p] + o * chunk;
              for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
            }
          }
          offset += extents[p];
        }
      });
}

Tensor stack(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  if (axis > parts.front().rank()) throw ShapeError("stack: axis out of range");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.shape() != parts.front().shape()) throw ShapeError("stack: shape mismatch");
    Shape s = p.shape();
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(p, std::move(s)));
  }
  return concat(expanded, axis);
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return Tensor::record({}, {total}, {a}, [n = a.numel()](std::span<const double> g, GradInputs gi) {
    for (std::size_t i = 0; i < n; ++i) gi[0][i] += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor weighted_sum(const Tensor& a, std::span<const double> weights) {
  if (weights.size() != a.numel()) throw ShapeError("weighted_sum: weight count mismatch");
  double total = 0.0;
  auto x = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i] * weights[i];
  std::vector<double> w(weights.begin(), weights.end());
  return Tensor::record({}, {total}, {a}, [w = std::move(w)](std::span<const double> g, GradInputs gi) {
    for (std::size_t i = 0; i < w.size(); ++i) gi[0][i] += g[0] * w[i];
  });
}

Tensor vector_norm(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("vector_norm: scalar input");
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.numel() / d;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  auto x = a.data();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t k = 0; k < d; ++k) ss += x[r * d + k] * x[r * d + k];
    out[r] = std::sqrt(ss + kNormEpsilon);
  }
  std::vector<double> norms = out;
  return Tensor::record(std::move(out_shape), std::move(out), {a},
                        [a, d, rows, norms = std::move(norms)](std::span<const double> g, GradInputs gi) {
                          auto x = a.data();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const double f = g[r] / norms[r];
                            for (std::size_t k = 0; k < d; ++k) gi[0][r * d + k] += f * x[r * d + k];
                          }
                        });
}

Tensor softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("softmax: scalar input");
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.numel() / d;
  auto x = a.data();
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * d;
    const double mx = *std::max_element(row, row + d);
    double z = 0.0;
    for (std::size_t k = 0; k < d; ++k) z += (out[r * d + k] = std::exp(row[k] - mx));
    for (std::size_t k = 0; k < d; ++k) out[r * d + k] /= z;
  }
  std::vector<double> y = out;
  return Tensor::record(a.shape(), std::move(out), {a},
                        [y = std::move(y), d, rows](std::span<const double> g, GradInputs gi) {
                          for (std::size_t r = 0; r < rows; ++r) {
                            double dot = 0.0;
                            for (std::size_t k = 0; k < d; ++k) dot += g[r * d + k] * y[r * d + k];
                            for (std::size_t k = 0; k < d; ++k)
                              gi[0][r * d + k] += y[r * d + k] * (g[r * d + k] - dot);
                          }
                        });
}

}  // namespace capsed
