#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capsed/capsule.hpp"
#include "capsed/tensor.hpp"
#include "capsed/types.hpp"

namespace capsed {

struct ModelConfig {
  std::size_t bands = 80;               // F
  std::size_t frames = 128;             // T per sample
  std::size_t conv_channels = 256;      // M, kernels per conv layer
  std::vector<std::size_t> pools{1, 4, 2, 2};  // frequency pool after each conv layer
  std::size_t conv_kernel = 3;
  std::size_t primary_channels = 32;
  std::size_t primary_dim = 8;
  std::size_t primary_kernel = 3;
  std::size_t classes = 16;             // K
  std::size_t event_dim = 16;
  std::size_t routing_iterations = kDefaultRoutingIterations;
  std::size_t gru_hidden = 256;         // per direction
  std::size_t fc_hidden = 512;
  double dropout = 0.25;
  double bce_weight = 0.7;
  double margin_weight = 0.3;
  MarginLossParams margin;

  std::size_t pooled_bands() const;     // F'
  std::size_t primary_capsules() const; // F' * primary_channels per frame
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Weights of one GRU direction, gate order (reset, update, new).
struct GruWeights {
  Tensor w_ih;  // [3H x in]
  Tensor w_hh;  // [3H x H]
  Tensor b_ih;  // [3H]
  Tensor b_hh;  // [3H]
};

/// Single-direction GRU over x [B x T x in] from a zero state, -> [B x T x H].
///   r = σ(W_ir x + b_ir + W_hr h + b_hr)
///   z = σ(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
///   h' = (1 − z) ⊙ n + z ⊙ h
Tensor gru(const Tensor& x, const GruWeights& w, bool reverse = false);
/// Forward and reverse passes concatenated per frame, -> [B x T x 2H].
Tensor bidirectional_gru(const Tensor& x, const GruWeights& forward, const GruWeights& backward);

struct ModelOutput {
  Tensor features;       // [B x M x F' x T]
  Tensor primary;        // [B*T x F'*C x D], row b*T + t, capsule f*C + c
  Tensor capsules;       // [B x event_dim x K x T]
  Tensor lengths;        // [B x K x T]
  Tensor hidden;         // [B x T x 2H]
  Tensor probabilities;  // [B x K x T]
  std::vector<RoutingState> routing;  // frames indexed b*T + t
};

class CapsuleSed {
 public:
  CapsuleSed(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// x: [B x 1 x F x T].
  ModelOutput forward(const Tensor& x, Mode mode, Rng& rng, bool keep_trace = false);

  Tensor feature_detector(const Tensor& x, Mode mode, Rng& rng);
  /// h: [B x M x F' x T] -> squashed capsules [B*T x F'*C x D].
  Tensor primary_caps(const Tensor& h) const;
  /// u: [N x F'*C x D] -> v [N x K x event_dim].
  RoutingResult event_caps(const Tensor& u, bool keep_trace = false) const;
  /// v: [B*T x K x event_dim] -> hidden [B x T x 2H] and probabilities [B x K x T].
  std::pair<Tensor, Tensor> recurrent_head(const Tensor& v, std::size_t batch) const;

  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  Tensor& parameter(const std::string& name);
  const Tensor& parameter(const std::string& name) const;

  std::vector<RunningStats>& batchnorm_stats() { return bn_stats_; }
  const std::vector<RunningStats>& batchnorm_stats() const { return bn_stats_; }

  GruWeights gru_weights(bool backward_direction) const;
  void zero_grad();

 private:
  ModelConfig config_;
  std::vector<NamedTensor> params_;
  std::vector<RunningStats> bn_stats_;
};

struct LossBreakdown {
  Tensor total;
  double bce = 0.0;
  double margin = 0.0;
};

/// w_bce · BCE + w_margin · margin. BCE clamps probabilities to
/// [1e-7, 1 − 1e-7] and averages over valid class-frame cells; the margin
/// loss sums over classes and averages over valid frames.
/// probabilities, lengths: [B x K x T]; one roll and one mask per sample
/// (an empty mask marks every frame valid).
LossBreakdown joint_loss(const Tensor& probabilities, const Tensor& lengths, std::span<const EventRoll> targets,
                         std::span<const FrameMask> masks, const ModelConfig& config);

inline constexpr double kProbabilityClamp = 1e-7;

}  // namespace capsed
