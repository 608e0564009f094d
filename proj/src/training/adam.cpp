#include <cmath>
#include <stdexcept>

#include "capsed/training.hpp"

namespace capsed {

void AdamConfig::validate() const {
  if (!(learning_rate >= 0.0 && std::isfinite(learning_rate))) {
    throw std::invalid_argument("adam: learning rate must be finite and nonnegative");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("adam: betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("adam: epsilon must be positive");
}

Adam::Adam(AdamConfig config) : config_(config) { config_.validate(); }

void Adam::step(std::span<NamedTensor> params) {
  if (moments_.empty()) {
    for (const auto& p : params) moments_.push_back({p.name, std::vector<double>(p.value.numel(), 0.0),
                                                     std::vector<double>(p.value.numel(), 0.0)});
  }
  if (moments_.size() != params.size()) throw std::logic_error("adam: parameter list changed between steps");
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != moments_[i].name || params[i].value.numel() != moments_[i].m.size()) {
      throw std::logic_error("adam: parameter " + params[i].name + " does not match optimizer state");
    }
    grads.push_back(params[i].value.grad());
    for (std::size_t j = 0; j < grads.back().size(); ++j) {
      if (!std::isfinite(grads.back()[j])) {
        throw std::runtime_error("adam: non-finite gradient in " + params[i].name + " at element " + std::to_string(j));
      }
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t), c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value.mutable_data();
    auto& m = moments_[i].m;
    auto& v = moments_[i].v;
    const auto& g = grads[i];
    for (std::size_t j = 0; j < g.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      w[j] -= config_.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.epsilon);
    }
  }
}

void Adam::restore(std::uint64_t steps, std::vector<Moments> moments) {
  for (const auto& m : moments) {
    if (m.m.size() != m.v.size()) throw std::invalid_argument("adam: moment sizes differ for " + m.name);
  }
  steps_ = steps;
  moments_ = std::move(moments);
}

}  // namespace capsed
