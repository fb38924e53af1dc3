#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <sstream>

#include "swiden/error.hpp"
#include "swiden/gradcheck.hpp"
#include "swiden/harness.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kData = 2, kGradcheck = 3 };

struct Flags {
  std::string config, arch, selector, data, out, scheduler, suite;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k, epochs, batch, split, jobs, classes, per_class;
  std::optional<double> lambda;
  std::vector<std::string> set;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key=value config file");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--data", f.data, "packed dataset file or image directory");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--set", f.set, "extra key=value overrides")->take_all();
}

void add_training(CLI::App* cmd, Flags& f) {
  cmd->add_option("--arch", f.arch, "baseline | swiden | grn | switch");
  cmd->add_option("--k", f.k, "SwiDeN split depth (1-5)");
  cmd->add_option("--lambda", f.lambda, "GRN reversal weight");
  cmd->add_option("--selector", f.selector, "oracle | predicted")->check(CLI::IsMember({"oracle", "predicted"}));
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--batch", f.batch, "batch size");
  cmd->add_option("--scheduler", f.scheduler, "plateau | off")->check(CLI::IsMember({"plateau", "off"}));
  cmd->add_option("--split", f.split, "split index");
}

swiden::RunConfig resolve(const Flags& f, swiden::RunConfig cfg = {}) {
  using namespace swiden;
  if (!f.config.empty()) apply_config(cfg, read_config_file(f.config));
  ConfigMap over;
  for (const auto& kv : f.set) {
    const auto parsed = parse_config_text(kv);
    over.insert(parsed.begin(), parsed.end());
  }
  if (!f.arch.empty()) over["arch"] = f.arch;
  if (!f.selector.empty()) over["selector"] = f.selector;
  if (!f.data.empty()) over["data"] = f.data;
  if (!f.out.empty()) over["out"] = f.out;
  if (!f.scheduler.empty()) over["scheduler"] = f.scheduler;
  if (f.seed) over["seed"] = std::to_string(*f.seed);
  if (f.k) over["k"] = std::to_string(*f.k);
  if (f.epochs) over["epochs"] = std::to_string(*f.epochs);
  if (f.batch) over["batch"] = std::to_string(*f.batch);
  if (f.split) over["split"] = std::to_string(*f.split);
  if (!f.suite.empty()) over["suite"] = f.suite;
  if (f.classes) over["classes"] = std::to_string(*f.classes);
  if (f.per_class) over["per_class"] = std::to_string(*f.per_class);
  if (f.jobs) over["jobs"] = std::to_string(*f.jobs);
  if (f.lambda) {
    std::ostringstream os;
    os << std::setprecision(17) << *f.lambda;
    over["lambda"] = os.str();
  }
  apply_config(cfg, over);
  cfg.validate();
  return cfg;
}

void print_epoch(const swiden::EpochLog& e) {
  std::cerr << "epoch " << e.epoch << "  loss " << e.loss << "  lr " << e.lr << "  val " << e.val_acc << "\n";
}

void print_summary(const swiden::RunArtifacts& a) {
  const auto& m = a.metrics;
  std::cout << "overall_acc=" << m.overall_acc;
  for (std::size_t s = 0; s < m.per_style_acc.size(); ++s)
    std::cout << "  " << swiden::style_name(s) << "=" << m.per_style_acc[s];
  std::cout << "\nmetrics: " << a.metrics_file.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Style-routed CNN experiments on CPU"};
  app.require_subcommand(1);
  Flags f;
  std::string gen_out = "data/synthetic.swds", ckpt, layer_filter;
  std::size_t gc_configs = 20;
  std::uint64_t gc_seed = 1;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic two-style dataset");
  add_common(gen, f);
  gen->add_option("--classes", f.classes, "number of shape classes (<= 10)");
  gen->add_option("--per-class", f.per_class, "images per class per style");
  gen->add_option("--file", gen_out, "output dataset file");

  auto* tsw = app.add_subcommand("train-switch", "train the style classifier");
  add_common(tsw, f);
  add_training(tsw, f);
  auto* train = app.add_subcommand("train", "train one architecture on one split");
  add_common(train, f);
  add_training(train, f);
  auto* eval = app.add_subcommand("eval", "five-crop evaluation of a checkpoint");
  add_common(eval, f);
  add_training(eval, f);
  eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  gc->add_option("--layer", layer_filter, "only layers whose name contains this");
  gc->add_option("--seed", gc_seed, "seed");
  gc->add_option("--configs", gc_configs, "random configurations per layer");
  auto* exp = app.add_subcommand("experiment", "run a table suite over all splits");
  add_common(exp, f);
  add_training(exp, f);
  exp->add_option("--suite", f.suite, "table1 | table3")->check(CLI::IsMember({"table1", "table3"}));
  exp->add_option("--jobs", f.jobs, "parallel runs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto cfg = resolve(f);
      const auto ds = swiden::cmd_gen_data(cfg, gen_out);
      std::cout << "wrote " << ds.size() << " images to " << gen_out << "\n";
    } else if (*tsw) {
      swiden::RunConfig base;
      base.epochs = 10;
      print_summary(swiden::cmd_train_switch(resolve(f, base), print_epoch));
    } else if (*train) {
      print_summary(swiden::cmd_train(resolve(f), print_epoch));
    } else if (*eval) {
      auto cfg = resolve(f);
      const auto a = swiden::cmd_eval(cfg, ckpt);
      print_summary(a);
      std::cout << swiden::format_accuracy_table({{a.metrics.arch, a.metrics.overall_acc,
                                                   a.metrics.style_acc(swiden::kArtStyle).value_or(0.0),
                                                   a.metrics.style_acc(swiden::kPhotoStyle).value_or(0.0)}});
    } else if (*gc) {
      swiden::GradcheckOptions opts;
      opts.configs = gc_configs;
      const auto results = swiden::run_gradcheck(layer_filter, gc_seed, opts);
      std::cout << swiden::format_gradcheck_report(results, opts.tolerance);
      for (const auto& r : results)
        if (!r.passed) return kGradcheck;
    } else if (*exp) {
      const auto res = swiden::cmd_experiment(resolve(f), [](const std::string& s) { std::cerr << s << "\n"; });
      std::cout << res.report;
      std::cerr << "finished in " << res.seconds << " s\n";
    }
  } catch (const swiden::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const swiden::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kConfig;
  } catch (const swiden::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
  return kOk;
}
