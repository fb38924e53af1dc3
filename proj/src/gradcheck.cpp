#include "swiden/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>

#include "swiden/error.hpp"
#include "swiden/layers.hpp"

namespace swiden {

namespace {

struct Acc {
  double max_rel = 0.0;
  std::size_t count = 0;

  void add(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-5});
    max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    ++count;
  }
};

double inner(const Tensor& a, const Tensor& b) { return dot(a, b); }

/// Checks d<layer(x), R>/dx and d/dparams. `fwd_seed` reseeds the forward Rng
/// on every evaluation so stochastic layers replay the same mask.
void check_layer(Layer& layer, Tensor x, std::uint64_t fwd_seed, Rng& rng, double h, Acc& acc,
                 double input_scale = 1.0) {
  auto eval = [&](const Tensor& in) {
    Rng r(fwd_seed);
    return layer.forward(in, Mode::Train, r);
  };
  const auto params = layer.params();
  for (auto* p : params) p->zero_grad();
  const Tensor y = eval(x);
  const Tensor R = Tensor::normal(y.shape(), 1.0, rng);
  const Tensor dx = layer.backward(R);

  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const Tensor yp = eval(x);
    x[i] = keep - h;
    const Tensor d = sub(yp, eval(x));
    x[i] = keep;
    acc.add(dx[i], input_scale * inner(d, R) / (2 * h));
  }
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const Tensor yp = eval(x);
      p->value[i] = keep - h;
      const Tensor d = sub(yp, eval(x));
      p->value[i] = keep;
      acc.add(p->grad[i], inner(d, R) / (2 * h));
    }
  }
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

/// Values whose pairwise gaps are at least 0.1, in random order.
Tensor spaced(const Shape& shape, Rng& rng) {
  const std::size_t n = shape_size(shape);
  std::vector<double> v(n);
  std::iota(v.begin(), v.end(), 0.0);
  shuffle(v, rng);
  for (auto& e : v) e = 0.1 * e - 0.05 * static_cast<double>(n) + rng.uniform(-0.02, 0.02);
  return Tensor(shape, std::move(v));
}

/// Normal values pushed at least `gap` away from zero.
Tensor away_from_zero(const Shape& shape, double gap, Rng& rng) {
  Tensor t = Tensor::normal(shape, 1.0, rng);
  for (auto& e : t.data())
    if (std::abs(e) < gap) e = e < 0 ? e - gap : e + gap;
  return t;
}

using Check = std::function<void(Rng&, const GradcheckOptions&, Acc&, std::string&, bool&)>;

void conv_check(Rng& rng, const GradcheckOptions& o, Acc& acc, std::string&, bool&) {
  const std::size_t n = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
  const std::size_t h = pick(rng, 3, 8), w = pick(rng, 3, 8);
  const std::size_t pad = pick(rng, 0, 1), stride = pick(rng, 1, 2);
  const std::size_t k = pick(rng, 1, std::min<std::size_t>(3, std::min(h, w) + 2 * pad));
  Conv2d conv(cin, cout, k, stride, pad, rng);
  conv.bias().value = Tensor::normal({cout}, 0.5, rng);
  check_layer(conv, Tensor::normal({n, cin, h, w}, 1.0, rng), rng.next(), rng, o.step, acc);
}

void maxpool_check(Rng& rng, const GradcheckOptions& o, Acc& acc, std::string&, bool&) {
  const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 3);
  const std::size_t k = pick(rng, 2, 3), stride = pick(rng, 1, 3);
  const std::size_t h = pick(rng, k, 8), w = pick(rng, k, 8);
  MaxPool2d pool(k, stride);
  check_layer(pool, spaced({n, c, h, w}, rng), 0, rng, o.step, acc);
}

void gap_check(Rng& rng, const GradcheckOptions& o, Acc& acc, std::string&, bool&) {
  GlobalAvgPool gap;
  check_layer(gap, Tensor::normal({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 8), pick(rng, 1, 8)}, 1.0, rng), 0,
              rng, o.step, acc);
}

void flatten_check(Rng& rng, const GradcheckOptions& o, Acc& acc, std::string&, bool&) {
  Flatten f;
  check_layer(f, Tensor::normal({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 8), pick(rng, 1, 8)}, 1.0, rng), 0,
              rng, o.step, acc);
}

void fc_check(Rng& rng, const GradcheckOptions& o, Acc& acc, std::string&, bool&) {
  const std::size_t n = pick(rng, 1, 2), d = pick(rng, 1, 12), k = pick(rng, 1, 6);
  Linear fc(d, k, rng);
  fc.bias().value = Tensor::normal({k}, 0.5, rng);
  check_layer(fc, Tensor::normal({n, d}, 1.0, rng), 0, rng, o.step, acc);
}

void relu_check(Rng& rng, const GradcheckOptions& o, Acc& acc, std::string&, bool&) {
  Relu r;
  check_layer(r, away_from_zero({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 8), pick(rng, 1, 8)}, 0.05, rng), 0,
              rng, o.step, acc);
}

void dropout_check(Rng& rng, const GradcheckOptions& o, Acc& acc, std::string&, bool&) {
  Dropout d(rng.uniform(0.0, 0.8));
  check_layer(d, Tensor::normal({pick(rng, 1, 2), pick(rng, 1, 24)}, 1.0, rng), rng.next(), rng, o.step, acc);
}

void grl_check(Rng& rng, const GradcheckOptions& o, Acc& acc, std::string& note, bool& exact_ok) {
  static const double lambdas[] = {0.0, 1.0, 2.0, 3.0, 5.0, 10.0};
  const double lambda = rng.bernoulli(0.5) ? lambdas[rng.index(6)] : rng.uniform(0.0, 10.0);
  GradientReversal grl(lambda);
  const Tensor x = Tensor::normal({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 6), pick(rng, 1, 6)}, 1.0, rng);
  // Finite differences see the identity forward; backward must be -lambda times that.
  check_layer(grl, x, 0, rng, o.step, acc, -lambda);

  Rng r(0);
  const Tensor y = grl.forward(x, Mode::Train, r);
  const Tensor up = Tensor::normal(x.shape(), 1.0, rng);
  const Tensor g = grl.backward(up);
  bool ok = y == x;
  for (std::size_t i = 0; i < up.size(); ++i) ok = ok && g[i] == -lambda * up[i];
  exact_ok = exact_ok && ok;
  note = "forward == input and backward == -lambda * upstream exactly";
}

void router_check(Rng& rng, const GradcheckOptions& o, Acc& acc, std::string& note, bool& exact_ok) {
  const std::size_t branches = pick(rng, 2, 3), n = pick(rng, 1, 3), cin = pick(rng, 1, 2);
  const std::size_t mid = pick(rng, 1, 3), cout = pick(rng, 1, 2), hw = pick(rng, 3, 6);
  std::vector<std::unique_ptr<Sequential>> bs;
  for (std::size_t b = 0; b < branches; ++b) {
    auto s = std::make_unique<Sequential>();
    s->emplace<Conv2d>(cin, mid, 3, 1, 1, rng);
    s->emplace<Conv2d>(mid, cout, 3, 1, 1, rng);
    bs.push_back(std::move(s));
  }
  Router router(std::move(bs));
  std::vector<std::size_t> routes(n);
  for (auto& r : routes) r = rng.index(branches);
  router.set_routes(routes);
  check_layer(router, Tensor::normal({n, cin, hw, hw}, 1.0, rng), 0, rng, o.step, acc);

  // check_layer leaves the analytic gradients in place; unused branches must be exactly 0.
  for (std::size_t b = 0; b < branches; ++b) {
    if (std::find(routes.begin(), routes.end(), b) != routes.end()) continue;
    for (auto* p : router.branch(b).params())
      for (double g : p->grad.data()) exact_ok = exact_ok && g == 0.0;
  }
  note = "gradients of unrouted branches are exactly 0";
}

void sequential_check(Rng& rng, const GradcheckOptions& o, Acc& acc, std::string&, bool&) {
  Sequential s;
  const std::size_t c = pick(rng, 1, 2), mid = pick(rng, 1, 3);
  s.emplace<Conv2d>(c, mid, 3, 1, 1, rng);
  s.emplace<MaxPool2d>(2, 2);
  s.emplace<Flatten>();
  s.emplace<Linear>(mid * 9, pick(rng, 1, 4), rng);
  // A 6x6 input with well-separated values keeps the pool away from ties after the conv.
  Tensor x = spaced({pick(rng, 1, 2), c, 6, 6}, rng);
  check_layer(s, x, 0, rng, o.step, acc);
}

void xent_check(Rng& rng, const GradcheckOptions& o, Acc& acc, std::string&, bool&) {
  const std::size_t n = pick(rng, 1, 4), k = pick(rng, 2, 6);
  Tensor logits = Tensor::normal({n, k}, 2.0, rng);
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = rng.index(k);
  const LossResult r = softmax_xent(logits, labels);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double keep = logits[i];
    logits[i] = keep + o.step;
    const double lp = softmax_xent(logits, labels).loss;
    logits[i] = keep - o.step;
    const double lm = softmax_xent(logits, labels).loss;
    logits[i] = keep;
    acc.add(r.grad[i], (lp - lm) / (2 * o.step));
  }
}

const std::vector<std::pair<std::string, Check>>& registry() {
  static const std::vector<std::pair<std::string, Check>> r = {
      {"conv2d", conv_check},     {"maxpool2d", maxpool_check}, {"global_avg_pool", gap_check},
      {"flatten", flatten_check}, {"fc", fc_check},             {"relu", relu_check},
      {"dropout", dropout_check}, {"grl", grl_check},           {"router", router_check},
      {"sequential", sequential_check}, {"softmax_xent", xent_check},
  };
  return r;
}

}  // namespace

const std::vector<std::string>& gradcheck_layers() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [n, _] : registry()) v.push_back(n);
    return v;
  }();
  return names;
}

std::vector<GradcheckResult> run_gradcheck(const std::string& filter, std::uint64_t seed,
                                           const GradcheckOptions& opts) {
  std::vector<GradcheckResult> out;
  for (std::size_t li = 0; li < registry().size(); ++li) {
    const auto& [name, check] = registry()[li];
    if (!filter.empty() && name.find(filter) == std::string::npos) continue;
    Rng rng(derive_seed(seed, li));
    Acc acc;
    std::string note;
    bool exact_ok = true;
    for (std::size_t c = 0; c < opts.configs; ++c) check(rng, opts, acc, note, exact_ok);
    out.push_back({name, opts.configs, acc.count, acc.max_rel, exact_ok && acc.max_rel < opts.tolerance,
                   note.empty() ? "" : note + (exact_ok ? ": ok" : ": FAILED")});
  }
  if (out.empty()) throw ConfigError("gradcheck: no layer matches \"" + filter + "\"");
  return out;
}

std::string format_gradcheck_report(const std::vector<GradcheckResult>& results, double tolerance) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "layer" << std::setw(9) << "configs" << std::setw(9) << "values"
     << std::setw(14) << "max rel err" << "status\n";
  for (const auto& r : results) {
    os << std::left << std::setw(18) << r.layer << std::setw(9) << r.configs << std::setw(9) << r.checked_values
       << std::setw(14) << std::scientific << std::setprecision(3) << r.max_rel_error << std::defaultfloat
       << (r.passed ? "PASS" : "FAIL");
    if (!r.note.empty()) os << "  (" << r.note << ")";
    os << "\n";
  }
  const bool all = std::all_of(results.begin(), results.end(), [](const GradcheckResult& r) { return r.passed; });
  os << (all ? "all layers pass" : "FAILURES") << " at tolerance " << tolerance << "\n";
  return os.str();
}

}  // namespace swiden
