#include "swiden/optim.hpp"

#include <cmath>
#include <limits>

namespace swiden {

void SgdConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
}

void sgd_step(std::span<Param* const> params, const SgdConfig& cfg, double current_lr) {
  for (Param* p : params) {
    const double step = current_lr * p->lr_scale;
    double* v = p->momentum.raw();
    double* w = p->value.raw();
    double* g = p->grad.raw();
    for (std::size_t i = 0, n = p->value.size(); i < n; ++i) {
      v[i] = cfg.momentum * v[i] - step * g[i];
      w[i] += v[i];
      g[i] = 0.0;
    }
  }
}

void PlateauConfig::validate() const {
  if (patience == 0) throw ConfigError("scheduler patience must be >= 1");
  if (!(min_delta >= 0.0)) throw ConfigError("scheduler min_delta must be >= 0");
  if (!(factor > 0.0 && factor < 1.0)) throw ConfigError("scheduler factor must be in (0, 1)");
}

PlateauScheduler::PlateauScheduler(double base_lr, PlateauConfig cfg)
    : cfg_(cfg), current_lr_(base_lr), best_metric_(-std::numeric_limits<double>::infinity()) {
  cfg_.validate();
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be > 0");
}

double PlateauScheduler::update(double val_accuracy) {
  if (!(val_accuracy >= 0.0 && val_accuracy <= 1.0))
    throw MetricError("validation accuracy must lie in [0, 1]");
  if (val_accuracy > best_metric_ + cfg_.min_delta) {
    best_metric_ = val_accuracy;
    epochs_since_improvement_ = 0;
  } else {
    ++epochs_since_improvement_;
  }
  if (epochs_since_improvement_ >= cfg_.patience) {
    if (reductions_ < cfg_.max_reductions) {
      current_lr_ *= cfg_.factor;
      ++reductions_;
    }
    epochs_since_improvement_ = 0;
  }
  return current_lr_;
}

}  // namespace swiden
