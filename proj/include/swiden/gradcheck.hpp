#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace swiden {

struct GradcheckResult {
  std::string layer;
  std::size_t configs = 0;
  std::size_t checked_values = 0;
  double max_rel_error = 0.0;
  bool passed = false;
  std::string note;  // extra exact checks (routing exclusivity, GRL scaling)
};

struct GradcheckOptions {
  std::size_t configs = 20;
  double tolerance = 1e-4;
  double step = 1e-5;
};

/// Names accepted by run_gradcheck's filter.
const std::vector<std::string>& gradcheck_layers();

/// Central finite differences against every hand-written backward. Each
/// layer is checked on `configs` random small shapes with the scalar loss
/// <layer(x), R> for a random R; relative error is |a - n| / max(|a|, |n|, 1e-5).
/// ReLU inputs are kept away from 0 and pooling inputs away from ties. An
/// empty filter runs every layer; otherwise layers whose name contains the
/// filter. Throws ConfigError when nothing matches.
std::vector<GradcheckResult> run_gradcheck(const std::string& filter, std::uint64_t seed,
                                           const GradcheckOptions& opts = {});

std::string format_gradcheck_report(const std::vector<GradcheckResult>& results, double tolerance);

}  // namespace swiden
