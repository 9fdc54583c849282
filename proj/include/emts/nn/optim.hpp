#pragma once

#include <span>
#include <vector>

namespace emts::nn {

struct AdamConfig {
  double learning_rate{1e-3};
  double beta1{0.9};
  double beta2{0.999};
  double epsilon{1e-8};
  double weight_decay{0.0};  // decoupled L2 coefficient
};

/// Adaptive-moment optimizer with bias correction and decoupled weight decay.
///
/// The parameter layout is fixed by the first call to `step`; later calls must
/// pass spans of the same sizes in the same order.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update. Returns false, leaving parameters and moments
  /// untouched, when any gradient is non-finite.
  bool step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads);

  long steps() const { return steps_; }
  long skipped() const { return skipped_; }
  const AdamConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  long steps_{0};
  long skipped_{0};
};

}  // namespace emts::nn
