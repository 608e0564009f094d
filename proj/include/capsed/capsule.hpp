#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "capsed/tensor.hpp"

namespace capsed {

struct MarginLossParams {
  double m_plus = 0.9;
  double m_minus = 0.1;
  double lambda = 0.5;

  /// Throws std::invalid_argument unless 0 < m_minus < m_plus < 1 and lambda > 0.
  void validate() const;
  friend bool operator==(const MarginLossParams&, const MarginLossParams&) = default;
};

/// v = (|s|² / (1 + |s|²)) · s / |s| along the last axis, with the
/// ε-safeguarded norm so s = 0 maps to 0 with a finite gradient.
Tensor squash(const Tensor& s);

/// û_{j|i} = W_ij u_i.
/// u: [N_low x d_low] or batched [N x N_low x d_low];
/// weights: [N_low x N_high x d_high x d_low];
/// result: [N_low x N_high x d_high] (or with the leading batch axis).
Tensor predict_vectors(const Tensor& u, const Tensor& weights);

/// s_j = Σ_i c_ij û_{j|i}. couplings [N x N_low x N_high],
/// predictions [N x N_low x N_high x d] -> [N x N_high x d].
Tensor coupled_sum(const Tensor& couplings, const Tensor& predictions);

/// a_ij = û_{j|i} · v_j. predictions [N x N_low x N_high x d],
/// outputs [N x N_high x d] -> [N x N_low x N_high].
Tensor agreement(const Tensor& predictions, const Tensor& outputs);

/// Snapshot of one routing iteration (values only, detached from the graph).
/// `log_priors` are the b_ij the iteration started from; `couplings` are
/// softmax_j(b_ij); `outputs` are the v_j the iteration produced.
/// Tensors carry a leading frame axis N even for unbatched calls.
struct RoutingState {
  std::size_t iteration = 0;  // 1-based
  Tensor log_priors;
  Tensor couplings;
  Tensor predictions;
  Tensor outputs;
};

struct RoutingResult {
  Tensor outputs;  // v: [N_high x d] or [N x N_high x d]
  std::vector<RoutingState> trace;
};

inline constexpr std::size_t kDefaultRoutingIterations = 3;

/// Routing-by-agreement over `iterations` unrolled rounds. b starts at zero;
/// each round computes c = softmax_j(b), s_j, v_j = squash(s_j) and then,
/// except after the last round, b += û·v. Gradients flow through every round.
RoutingResult route(const Tensor& predictions, std::size_t iterations, bool keep_trace = false);

/// Euclidean norm of each capsule (last axis).
Tensor capsule_lengths(const Tensor& capsules);

/// Per-class margin terms
///   T·max(0, m⁺ − |v|)² + λ(1 − T)·max(0, |v| − m⁻)²
/// with the same shape as `lengths`; `targets` holds 0/1 per element.
Tensor margin_loss_terms(const Tensor& lengths, std::span<const double> targets,
                         const MarginLossParams& params);

/// Σ_k of the margin terms.
Tensor margin_loss(const Tensor& lengths, std::span<const double> targets,
                   const MarginLossParams& params = {});

/// Tab-separated rows "iteration i j b_ij c_ij" for one frame of a trace.
void write_routing_trace(std::ostream& os, const std::vector<RoutingState>& trace,
                         std::size_t frame = 0);

}  // namespace capsed
