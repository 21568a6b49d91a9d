#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "rcnnlab/config.hpp"
#include "rcnnlab/experiment.hpp"

namespace fs = std::filesystem;
using namespace rcnnlab;

namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<std::string> sampling;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "experiment config file")->required();
  cmd->add_option("--seed", a.seed, "override experiment.seed");
  cmd->add_option("--out", a.out, "output directory");
  cmd->add_option("--mode", a.mode, "baseline, rga, prm or rga+prm");
  cmd->add_option("--sampling", a.sampling, "soft or hard");
}

// Any bad value here is a configuration problem, so it surfaces as ConfigError.
ExperimentConfig resolve(const CommonArgs& a) {
  ExperimentConfig c = load_config(a.config, a.seed);
  try {
    if (a.out) c.out_dir = *a.out;
    if (a.mode) c.mode = parse_mode(*a.mode);
    if (a.sampling) c.sampling = parse_sampling_mode(*a.sampling);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(0, e.what());
  }
  c.validate();
  return c;
}

StepCallback progress(const ExperimentConfig& c) {
  const std::int64_t total = c.train.total_steps;
  return [total](std::int64_t t) {
    if (total >= 10 && (t + 1) % (total / 10) == 0) std::cerr << fmt::format("  step {}/{}\n", t + 1, total);
  };
}

void print_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::cout << in.rdbuf();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rcnnlab: sampling, gradient annealing and parallel heads on synthetic detection scenes"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, sweep_args, report_args;
  auto* gen = app.add_subcommand("gen-data", "generate (or reuse) the dataset in the output directory");
  add_common(gen, gen_args);
  auto* train = app.add_subcommand("train", "generate data, train, evaluate and write all artifacts");
  add_common(train, train_args);
  auto* eval = app.add_subcommand("eval", "re-evaluate the checkpoint in the output directory");
  add_common(eval, eval_args);
  auto* sw = app.add_subcommand("sweep", "grid over one axis, median over seeds");
  add_common(sw, sweep_args);
  std::string axis;
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds;
  sw->add_option("--axis", axis, "lambda0, ratio-pair or sampling-mode")->required();
  sw->add_option("--values", values, "axis values")->delimiter(',')->required();
  sw->add_option("--seeds", seeds, "seeds (default: the config seed)")->delimiter(',');
  auto* report = app.add_subcommand("report", "print the evaluation report of a finished run");
  add_common(report, report_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      const auto c = resolve(gen_args);
      if (auto cached = load_cached_dataset(c.out_dir, c)) {
        std::cout << fmt::format("reused {} train / {} eval scenes in {}\n", cached->train.size(), cached->eval.size(),
                                 c.out_dir);
      } else {
        const auto d = build_dataset(c);
        save_dataset(c.out_dir, c, d);
        std::cout << fmt::format("wrote {} train / {} eval scenes to {}\n", d.train.size(), d.eval.size(), c.out_dir);
      }
    } else if (*train) {
      const auto c = resolve(train_args);
      const auto r = run_experiment(c, progress(c));
      write_report(std::cout, c, r.eval);
    } else if (*eval) {
      const auto c = resolve(eval_args);
      const auto r = evaluate_checkpoint(c);
      write_report(std::cout, c, r);
    } else if (*sw) {
      const auto c = resolve(sweep_args);
      SweepAxis ax;
      try {
        ax = parse_sweep_axis(axis);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(0, e.what());
      }
      if (seeds.empty()) seeds.push_back(c.seed);
      const auto cells = sweep(c, ax, values, seeds, &std::cerr);
      write_sweep_csv(std::cout, ax, cells);
      for (const auto& cell : cells)
        if (!cell.errors.empty()) return 2;
    } else if (*report) {
      const auto c = resolve(report_args);
      print_file(fs::path(c.out_dir) / "report.txt");
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
