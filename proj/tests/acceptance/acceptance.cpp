// Acceptance suite: runs every criterion, prints one PASS/FAIL line each and
// exits non-zero when any criterion fails.
//
//   acceptance [--workdir DIR] [--only 1,4,6]

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "swiden/data.hpp"
#include "swiden/error.hpp"
#include "swiden/gradcheck.hpp"
#include "swiden/harness.hpp"
#include "swiden/models.hpp"
#include "swiden/optim.hpp"

using namespace swiden;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path g_workdir;
std::optional<ExperimentResult> g_table1;

// ---------------------------------------------------------------- 1

void gradient_checks(Outcome& o) {
  const auto t0 = Clock::now();
  const auto results = run_gradcheck("", 20240601);
  const double secs = seconds_since(t0);
  double worst = 0;
  for (const auto& r : results) {
    o.require(r.passed, r.layer + " failed gradcheck (" + r.note + ")");
    o.require(r.configs >= 20, r.layer + " ran fewer than 20 configs");
    o.require(r.max_rel_error < 1e-4, r.layer + " error too large");
    worst = std::max(worst, r.max_rel_error);
  }
  o.require(results.size() == gradcheck_layers().size(), "not every layer was checked");
  o.require(secs < 120.0, "runtime over 2 minutes");
  o.detail << results.size() << " layers, max rel err " << worst << ", " << secs << " s";
}

// ---------------------------------------------------------------- 2

SwiDeNSpec routing_spec(std::size_t k, double dropout) {
  SwiDeNSpec s;
  s.k = k;
  s.num_styles = 2;
  s.selector = SelectorMode::Oracle;
  s.backbone.dropout = dropout;
  s.backbone.zero_classifier = false;
  return s;
}

void routing_exclusivity(Outcome& o) {
  Rng rng(2);
  double worst = 0;
  for (std::size_t k = 1; k <= 5; ++k) {
    {
      Network net = build_swiden(routing_spec(k, 0.5), 100 + k);
      const Tensor x = Tensor::normal({4, 3, 64, 64}, 0.5, rng);
      const std::vector<std::size_t> styles(4, 1), labels{0, 3, 5, 9};
      Rng drop(7);
      net.train_step(x, labels, styles, drop);
      bool zero = true, touched = false;
      for (Param* p : net.router()->branch(0).params())
        for (double g : p->grad.data()) zero = zero && g == 0.0;
      for (Param* p : net.router()->branch(1).params())
        for (double g : p->grad.data()) touched = touched || g != 0.0;
      o.require(zero, "C" + std::to_string(k) + "-S style-0 branch received gradient");
      o.require(touched, "C" + std::to_string(k) + "-S style-1 branch received no gradient");
    }
    {
      Network net = build_swiden(routing_spec(k, 0.0), 200 + k);
      const std::vector<std::size_t> styles{0, 1, 1, 0};
      const Tensor x = Tensor::normal({4, 3, 64, 64}, 0.5, rng);
      const Tensor up = Tensor::normal({4, 10}, 1.0, rng);
      Rng unused(0);
      const Tensor y = net.forward(x, styles, Mode::Train, unused).logits;
      net.backward(up);
      std::vector<Tensor> mixed;
      for (Param* p : net.params()) mixed.push_back(p->grad);
      net.zero_grad();
      for (std::size_t i = 0; i < 4; ++i) {
        const std::vector<std::size_t> one{styles[i]};
        const Tensor yi = net.forward(x.slice0(i, 1), one, Mode::Train, unused).logits;
        net.backward(up.slice0(i, 1));
        for (std::size_t j = 0; j < yi.size(); ++j) worst = std::max(worst, std::abs(yi[j] - y[i * 10 + j]));
      }
      const auto params = net.params();
      for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t j = 0; j < mixed[p].size(); ++j)
          worst = std::max(worst, std::abs(mixed[p][j] - params[p]->grad[j]) / std::max(1.0, std::abs(mixed[p][j])));
    }
  }
  o.require(worst <= 1e-10, "mixed batch differs from isolated runs");
  o.detail << "k=1..5 unused branch grads exactly 0; mixed vs isolated max diff " << worst;
}

// ---------------------------------------------------------------- 3

void grl_contract(Outcome& o) {
  Rng rng(3);
  for (double lambda : {0.0, 1.0, 2.0, 3.0, 5.0, 10.0}) {
    GradientReversal grl(lambda);
    const Tensor x = Tensor::normal({3, 5, 4}, 2.0, rng);
    o.require(grl.forward(x, Mode::Train, rng) == x, "forward not identity");
    const Tensor g = Tensor::normal({3, 5, 4}, 2.0, rng);
    const Tensor b = grl.backward(g);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (b[i] != -lambda * g[i]) {
        o.require(false, "backward != -lambda * g for lambda " + std::to_string(lambda));
        break;
      }
  }
  o.detail << "lambda in {0,1,2,3,5,10}: forward identical, backward exactly -lambda*g";
}

// ---------------------------------------------------------------- 4

void baseline_equivalence(Outcome& o) {
  RunConfig c;
  c.epochs = 5;
  const Dataset ds = load_dataset(c);
  const Split split = make_splits(ds, c.split_spec(), 1)[0];
  RunConfig b = c;
  b.arch = Architecture::Baseline;
  RunConfig s = c;
  s.arch = Architecture::SwiDeN;
  s.branches = 1;
  s.selector = SelectorMode::Oracle;
  const auto rb = train_and_evaluate(b, ds, split);
  const auto rs = train_and_evaluate(s, ds, split);
  o.require(rb.metrics.loss_curve.size() == 5, "expected 5 epochs");
  o.require(rb.metrics.loss_curve == rs.metrics.loss_curve, "loss trajectories differ");
  o.require(rb.metrics.predictions.size() == rs.metrics.predictions.size(), "prediction counts differ");
  bool same_preds = true;
  for (std::size_t i = 0; i < rb.metrics.predictions.size(); ++i)
    same_preds = same_preds && rb.metrics.predictions[i].predicted == rs.metrics.predictions[i].predicted;
  o.require(same_preds, "test predictions differ");
  o.detail << "5-epoch loss curves bit-identical (final loss " << rb.metrics.loss_curve.back() << ")";
}

// ---------------------------------------------------------------- 5

void switch_training(Outcome& o) {
  RunConfig c;
  c.arch = Architecture::Switch;
  c.epochs = 10;
  c.seed = 42;
  c.classes = 10;
  c.per_class = 50;
  const auto t0 = Clock::now();
  const Dataset ds = load_dataset(c);
  const Split split = make_splits(ds, c.split_spec(), 1)[0];
  const auto r = train_and_evaluate(c, ds, split);
  const double secs = seconds_since(t0);
  o.require(r.metrics.overall_acc >= 0.95, "style accuracy below 95%");
  o.require(secs < 180.0, "over 3 minutes");
  o.detail << "style acc " << r.metrics.overall_acc * 100 << "% after 10 epochs, " << secs << " s";
}

// ---------------------------------------------------------------- 6

void end_to_end(Outcome& o) {
  RunConfig c;
  c.suite = "table1";
  c.out = g_workdir / "table1";
  fs::remove_all(c.out);
  const auto t0 = Clock::now();
  g_table1 = cmd_experiment(c, [](const std::string& line) { std::cout << "    " << line << std::endl; });
  const double secs = seconds_since(t0);
  const auto& res = *g_table1;
  o.require(secs < 1800.0, "over 30 minutes");
  o.require(res.mean_rows.size() == 3, "table1 must have three rows");
  for (const auto& row : res.mean_rows) {
    o.require(row.overall >= 0.85, row.label + " below 85%");
    o.detail << row.label << " " << row.overall * 100 << "% | ";
  }
  for (const auto& row_runs : res.runs)
    for (const auto& m : row_runs) {
      o.require(m.style_total.size() == 2 && m.style_total[0] == m.style_total[1], "unbalanced test set");
      o.require(m.correct == m.style_correct[0] + m.style_correct[1], "counts do not add up");
      const double style_mean = 0.5 * (*m.style_acc(0) + *m.style_acc(1));
      o.require(std::abs(m.overall_acc - style_mean) <= 1e-15, "overall != mean(art, photo)");
    }
  for (const char* col : {"Arch.", "Overall Acc.", "Art Acc.", "Photo Acc."})
    o.require(res.report.find(col) != std::string::npos, std::string("report lacks column ") + col);
  o.detail << secs << " s";
}

// ---------------------------------------------------------------- 7

void split_protocol(Outcome& o) {
  RunConfig c;
  const Dataset ds = load_dataset(c);
  const auto splits = make_splits(ds, c.split_spec(), 5);
  o.require(splits.size() == 5, "expected 5 splits");
  for (const auto& sp : splits) {
    std::map<std::pair<std::size_t, std::size_t>, std::pair<std::size_t, std::size_t>> cells;
    for (auto i : sp.train) ++cells[{ds.images[i].class_id, ds.images[i].style_id}].first;
    for (auto i : sp.test) ++cells[{ds.images[i].class_id, ds.images[i].style_id}].second;
    o.require(cells.size() == 20, "missing (class, style) cells");
    for (const auto& [cell, n] : cells) o.require(n.first == 30 && n.second == 10, "cell counts are not 30/10");
    std::set<std::size_t> train(sp.train.begin(), sp.train.end());
    for (auto i : sp.test) o.require(!train.count(i), "train and test overlap");
    for (auto i : sp.val) o.require(!train.count(i), "train and val overlap");
    o.require(sp.train.size() + sp.test.size() + sp.val.size() == ds.size(), "split does not cover dataset");
  }
  o.detail << "5 splits x 20 cells: 30 train / 10 test each, disjoint";
}

// ---------------------------------------------------------------- 8

void five_crop_arithmetic(Outcome& o) {
  const std::array<CropOffset, 5> a{{{0, 0}, {0, 32}, {32, 0}, {32, 32}, {16, 16}}};
  const std::array<CropOffset, 5> b{{{0, 0}, {0, 8}, {8, 0}, {8, 8}, {4, 4}}};
  o.require(five_crop_offsets(256, 256, 224) == a, "(256,224) offsets");
  o.require(five_crop_offsets(72, 72, 64) == b, "(72,64) offsets");
  o.detail << "(256,224) and (72,64) offsets exact";
}

// ---------------------------------------------------------------- 9

RunConfig reduced_suite(const std::string& suite) {
  RunConfig c;
  c.suite = suite;
  c.classes = 4;
  c.per_class = 12;
  c.train_per_style = 6;
  c.test_per_style = 3;
  c.num_splits = 2;
  c.epochs = 3;
  c.switch_epochs = 2;
  c.resize = 36;
  c.crop = 32;
  c.backbone.stages = {{1, 4}, {1, 6}, {1, 8}, {1, 8}, {1, 8}};
  c.backbone.fc_dim = 16;
  return c;
}

std::vector<fs::path> metrics_files(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename().string().find("metrics") != std::string::npos)
      out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

void determinism(Outcome& o) {
  std::size_t compared = 0;
  for (const char* suite : {"table1", "table3"}) {
    RunConfig c = reduced_suite(suite);
    const fs::path a = g_workdir / "determinism" / suite / "a", b = g_workdir / "determinism" / suite / "b";
    fs::remove_all(a);
    fs::remove_all(b);
    c.out = a;
    cmd_experiment(c);
    c.out = b;
    c.jobs = 2;  // scheduling must not matter
    cmd_experiment(c);
    const auto fa = metrics_files(a), fb = metrics_files(b);
    o.require(!fa.empty() && fa == fb, std::string(suite) + ": different metrics file sets");
    for (const auto& f : fa) {
      o.require(compare_metrics_files(a / f, b / f), std::string(suite) + ": " + f.string() + " differs");
      ++compared;
    }
  }
  o.detail << compared << " metrics files identical across re-runs of reduced table1 and table3 suites";
  if (g_table1) {
    // Replay one full-scale cell (split 0 GRN) outside the suite.
    RunConfig c;
    c.arch = Architecture::Grn;
    c.scheduler = false;
    c.seed = derive_seed(c.seed, 0);
    RunConfig data_cfg;
    const Dataset ds = load_dataset(data_cfg);
    const auto splits = make_splits(ds, data_cfg.split_spec(), data_cfg.num_splits);
    const auto r = train_and_evaluate(c, ds, splits[0]);
    const fs::path replay = g_workdir / "determinism" / "grn_split0_metrics.txt";
    write_metrics(replay, r.metrics);
    o.require(compare_metrics_files(g_workdir / "table1" / "split0" / "grn_metrics.txt", replay),
              "full-scale split 0 GRN replay differs");
    o.detail << "; full-scale split 0 GRN replay identical";
  }
}

// ---------------------------------------------------------------- 10

/// Independent statement of the plateau rule: lr for epoch e+1 given val[0..e].
std::vector<double> plateau_oracle(const std::vector<double>& val, double base, const PlateauConfig& p) {
  std::vector<double> lrs{base};
  double best = -std::numeric_limits<double>::infinity(), lr = base;
  std::size_t flat = 0, cuts = 0;
  for (double v : val) {
    if (v > best + p.min_delta) {
      best = v;
      flat = 0;
    } else if (++flat >= p.patience) {
      flat = 0;
      if (cuts < p.max_reductions) {
        lr *= p.factor;
        ++cuts;
      }
    }
    lrs.push_back(lr);
  }
  return lrs;
}

void scheduler_behaviour(Outcome& o) {
  {
    PlateauScheduler s(1.0, {3, 0.001, 0.1, 2});
    std::vector<double> lrs;
    for (double a : {0.5, 0.6, 0.6, 0.6, 0.6}) lrs.push_back(s.update(a));
    o.require(lrs[3] == 1.0 && std::abs(lrs[4] - 0.1) < 1e-15, "drop not exactly after 3rd flat epoch");
  }
  Rng rng(10);
  const PlateauConfig def;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> trace;
    double level = 0.1;
    for (int e = 0; e < 40; ++e) {
      if (rng.uniform() < 0.3) level = std::min(1.0, level + 0.05 * rng.uniform());
      trace.push_back(level);
    }
    PlateauScheduler s(0.01, def);
    std::vector<double> got{0.01};
    for (double v : trace) got.push_back(s.update(v));
    const auto want = plateau_oracle(trace, 0.01, def);
    for (std::size_t i = 0; i < got.size(); ++i)
      if (std::abs(got[i] - want[i]) > 1e-18) {
        o.require(false, "scheduler disagrees with rule on a synthetic trace");
        break;
      }
  }
  std::size_t checked_runs = 0, drops = 0;
  if (g_table1) {
    for (std::size_t r = 0; r < g_table1->row_labels.size(); ++r)
      for (const auto& m : g_table1->runs[r]) {
        if (g_table1->row_labels[r] == "GRN") {
          for (double lr : m.lr_curve) o.require(lr == m.lr_curve.front(), "GRN learning rate changed");
        } else {
          const auto want = plateau_oracle(m.val_curve, m.lr_curve.front(), def);
          for (std::size_t e = 0; e < m.lr_curve.size(); ++e)
            o.require(std::abs(m.lr_curve[e] - want[e]) <= 1e-18, m.arch + " lr curve breaks the plateau rule");
          for (std::size_t e = 1; e < m.lr_curve.size(); ++e) drops += m.lr_curve[e] < m.lr_curve[e - 1];
        }
        ++checked_runs;
      }
  } else {
    RunConfig c = reduced_suite("table1");
    c.arch = Architecture::Grn;
    c.epochs = 8;
    const Dataset ds = load_dataset(c);
    const auto r = train_and_evaluate(c, ds, make_splits(ds, c.split_spec(), 1)[0]);
    for (double lr : r.metrics.lr_curve) o.require(lr == c.sgd.base_lr, "GRN learning rate changed");
    ++checked_runs;
  }
  o.detail << "rule matches 200 synthetic traces; " << checked_runs << " training runs checked (" << drops
           << " scheduled drops), GRN lr constant";
}

struct Criterion {
  int id;
  std::string name;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  g_workdir = fs::temp_directory_path() / "swiden_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--workdir" && i + 1 < argc) {
      g_workdir = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::cerr << "usage: acceptance [--workdir DIR] [--only 1,2,...]\n";
      return 2;
    }
  }
  fs::create_directories(g_workdir);

  const std::vector<Criterion> criteria{
      {1, "gradient-check suite", gradient_checks},
      {2, "routing exclusivity", routing_exclusivity},
      {3, "GRL contract", grl_contract},
      {4, "baseline equivalence", baseline_equivalence},
      {5, "Switch training", switch_training},
      {6, "end-to-end table1 experiment", end_to_end},
      {7, "split protocol", split_protocol},
      {8, "five-crop arithmetic", five_crop_arithmetic},
      {9, "determinism", determinism},
      {10, "scheduler behaviour", scheduler_behaviour},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    std::cout << "[" << c.id << "] " << c.name << " ..." << std::endl;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail.str()
              << " [" << seconds_since(t0) << " s]" << std::endl;
  }
  std::cout << (failed ? "ACCEPTANCE FAILED: " + std::to_string(failed) + " criteria" : "ACCEPTANCE PASSED")
            << std::endl;
  return failed ? 1 : 0;
}
