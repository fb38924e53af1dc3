#pragma once

#include <cstddef>
#include <span>

#include "swiden/layers.hpp"

namespace swiden {

struct SgdConfig {
  double base_lr = 1e-2;
  double momentum = 0.9;

  void validate() const;
};

/// Heavy-ball SGD: v <- mu v - (lr * lr_scale) g ; w <- w + v. Gradients are
/// zeroed afterwards.
void sgd_step(std::span<Param* const> params, const SgdConfig& cfg, double current_lr);

struct PlateauConfig {
  std::size_t patience = 5;
  double min_delta = 1e-3;
  double factor = 0.1;
  std::size_t max_reductions = 2;

  void validate() const;
};

/// Steps the learning rate down by `factor` once validation accuracy has
/// failed to beat the best value by more than `min_delta` for `patience`
/// consecutive epochs. Stops reducing after `max_reductions` step-downs.
class PlateauScheduler {
 public:
  PlateauScheduler(double base_lr, PlateauConfig cfg = {});

  /// Feeds one epoch's validation accuracy (in [0,1]); returns the learning
  /// rate to use next. Throws MetricError outside [0,1].
  double update(double val_accuracy);

  double current_lr() const { return current_lr_; }
  double best_metric() const { return best_metric_; }
  std::size_t epochs_since_improvement() const { return epochs_since_improvement_; }
  std::size_t reductions() const { return reductions_; }
  const PlateauConfig& config() const { return cfg_; }

 private:
  PlateauConfig cfg_;
  double current_lr_;
  double best_metric_;
  std::size_t epochs_since_improvement_ = 0;
  std::size_t reductions_ = 0;
};

}  // namespace swiden
