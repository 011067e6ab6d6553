// Command-line driver: train / sweep / verify / report.
// Exit codes: 0 success, 1 invariant failure, 2 configuration error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "darlab/harness.hpp"
#include "darlab/trace.hpp"
#include "darlab/verify.hpp"

namespace {

darlab::TaskSpec preset_task(const std::string& name) {
  if (name == "standard_bandit") return darlab::standard_bandit_spec();
  if (name == "hackable_default") return darlab::hackable_default_spec();
  if (name == "length_task") return darlab::length_task_spec();
  throw darlab::ConfigError("unknown task preset '" + name + "'");
}

struct CommonFlags {
  std::string config_path;
  std::string task_preset;
  std::string algorithm;
  std::string output_dir;
  std::optional<double> alpha, beta, w_clip, lr;
  std::optional<int> k_shot, steps, eval_every, updates;
  std::vector<std::uint64_t> seeds;
  bool exact = false;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "experiment config file");
  cmd->add_option("--task", flags.task_preset,
                  "task preset (standard_bandit, hackable_default, "
                  "length_task)");
  cmd->add_option("--algorithm", flags.algorithm, "algorithm id");
  cmd->add_option("--alpha", flags.alpha, "trade-off coefficient");
  cmd->add_option("--beta", flags.beta, "regularization strength");
  cmd->add_option("--k-shot", flags.k_shot, "samples per prompt per step");
  cmd->add_option("--w-clip", flags.w_clip, "weight clip threshold");
  cmd->add_option("--lr", flags.lr, "learning rate");
  cmd->add_option("--steps", flags.steps, "training steps");
  cmd->add_option("--seed", flags.seeds, "seeds (repeatable)");
  cmd->add_option("--eval-every", flags.eval_every, "evaluation cadence");
  cmd->add_option("--updates-per-batch", flags.updates,
                  "gradient updates per online batch");
  cmd->add_option("--out", flags.output_dir, "output directory");
  cmd->add_flag("--exact", flags.exact, "exact-expectation mode");
}

darlab::ExperimentConfig build_config(const CommonFlags& flags) {
  darlab::ExperimentConfig config;
  if (!flags.config_path.empty()) {
    config = darlab::load_config(flags.config_path);
  } else {
    config.task = darlab::standard_bandit_spec();
  }
  if (!flags.task_preset.empty()) config.task = preset_task(flags.task_preset);
  if (!flags.algorithm.empty()) {
    config.algorithm = darlab::algorithm_from_string(flags.algorithm);
  }
  if (flags.alpha) {
    config.reg.alpha = *flags.alpha;
    config.ppo.alpha = *flags.alpha;
  }
  if (flags.beta) {
    config.reg.beta = *flags.beta;
    config.ppo.shaping_beta = *flags.beta;
  }
  if (flags.k_shot) config.reg.k_shot = *flags.k_shot;
  if (flags.w_clip) config.reg.w_clip = *flags.w_clip;
  if (flags.lr) config.reg.learning_rate = *flags.lr;
  if (flags.steps) config.reg.steps = *flags.steps;
  if (flags.eval_every) config.eval_every = *flags.eval_every;
  if (flags.updates) {
    config.reg.updates_per_batch = *flags.updates;
    config.ppo.updates_per_batch = *flags.updates;
  }
  if (flags.exact) config.reg.exact_expectation = true;
  if (!flags.seeds.empty()) config.seeds = flags.seeds;
  if (!flags.output_dir.empty()) config.output_dir = flags.output_dir;
  config.validate();
  return config;
}

int print_summary(const darlab::RunSummary& summary) {
  std::cout << "output: " << summary.output_dir << "\n";
  for (const auto& cell : summary.cells) {
    std::cout << "  seed " << cell.seed;
    if (cell.sweep_value) {
      std::cout << " value " << darlab::format_double(*cell.sweep_value);
    }
    if (cell.failed) {
      std::cout << "  FAILED: " << cell.error << "\n";
    } else {
      std::cout << "  true_reward "
                << darlab::format_double(cell.final_true_reward)
                << "  kl " << darlab::format_double(cell.kl_measure) << "\n";
    }
  }
  return summary.failed_cells == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"darlab: dual-regularized advantage regression laboratory"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  CLI::App* train = app.add_subcommand("train", "run one training experiment");
  add_common_flags(train, train_flags);

  CommonFlags sweep_flags;
  std::string sweep_param = "beta";
  std::vector<double> sweep_values;
  CLI::App* sweep = app.add_subcommand("sweep", "run a parameter sweep");
  add_common_flags(sweep, sweep_flags);
  sweep->add_option("--param", sweep_param, "config field to sweep");
  sweep->add_option("--values", sweep_values, "sweep values");

  std::string verify_scale = "quick";
  std::string verify_out;
  CLI::App* verify = app.add_subcommand("verify", "run the invariant suite");
  verify->add_option("--scale", verify_scale, "quick or full");
  verify->add_option("--out", verify_out, "write the JSON report here");

  std::vector<std::string> report_runs;
  std::string report_out = "report";
  CLI::App* report_cmd =
      app.add_subcommand("report", "comparison tables for finished runs");
  report_cmd->add_option("--runs", report_runs, "run directories")->required();
  report_cmd->add_option("--out", report_out, "report output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      darlab::ExperimentConfig config = build_config(train_flags);
      config.sweep.reset();
      return print_summary(darlab::run_experiment(config));
    }
    if (*sweep) {
      darlab::ExperimentConfig config = build_config(sweep_flags);
      if (!sweep_values.empty()) {
        config.sweep = darlab::SweepSpec{sweep_param, sweep_values};
      }
      if (!config.sweep) {
        throw darlab::ConfigError("sweep needs --values or a config sweep");
      }
      config.validate();
      if (config.sweep->parameter == "beta" &&
          config.sweep->values.size() >= 3) {
        const auto result = darlab::pareto_sweep(config);
        const int rc = print_summary(result.summary);
        if (result.fit.valid) {
          std::cout << "fitted peak reward "
                    << darlab::format_double(result.fit.peak_reward())
                    << " at kl "
                    << darlab::format_double(result.fit.peak_kl()) << "\n";
        } else {
          std::cout << "fit absent (rank-deficient)\n";
        }
        return rc;
      }
      return print_summary(darlab::run_experiment(config));
    }
    if (*verify) {
      darlab::VerifyScale scale;
      if (verify_scale == "quick") {
        scale = darlab::VerifyScale::kQuick;
      } else if (verify_scale == "full") {
        scale = darlab::VerifyScale::kFull;
      } else {
        throw darlab::ConfigError("--scale must be quick or full");
      }
      const auto report = darlab::verify_all(scale);
      for (const auto& c : report.checks) {
        std::printf("[%s] %s (discrepancy %.3g, tol %.3g)%s%s\n",
                    c.pass ? "PASS" : "FAIL", c.name.c_str(), c.discrepancy,
                    c.tolerance, c.detail.empty() ? "" : " - ",
                    c.detail.c_str());
      }
      if (!verify_out.empty()) {
        darlab::write_text_file(verify_out,
                                darlab::verify_report_to_json(report));
      }
      std::cout << report.failures() << " failing checks of "
                << report.checks.size() << "\n";
      return report.failures() == 0 ? 0 : 1;
    }
    if (*report_cmd) {
      darlab::report(report_runs, report_out);
      std::cout << "report written to " << report_out << "\n";
      return 0;
    }
  } catch (const darlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
