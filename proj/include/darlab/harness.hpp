#pragma once

// Experiment driver: configuration files, training/sweep execution with
// per-cell isolation, Pareto-frontier fitting, aggregation with confidence
// intervals, and comparison reports.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "darlab/baselines.hpp"
#include "darlab/dar.hpp"
#include "darlab/envs.hpp"

namespace darlab {

enum class Algorithm {
  kDar,
  kDaoReinforce,
  kDaoIs,
  kPpo,
  kPpoPenalty,
  kPpoAlign,
  kDualPpo,
  kDualPpoClip,
  kDualMixPpo,
  kRloo,
  kGrpo,
  kBonSft,
};

std::string to_string(Algorithm algorithm);
Algorithm algorithm_from_string(const std::string& s);
bool is_dual_regularized(Algorithm algorithm);

struct SweepSpec {
  std::string parameter;
  std::vector<double> values;
};

struct ExperimentConfig {
  TaskSpec task;
  Algorithm algorithm = Algorithm::kDar;
  RegConfig reg;
  PPOConfig ppo;
  std::vector<std::uint64_t> seeds{1};
  std::optional<SweepSpec> sweep;
  std::string output_dir;
  int eval_every = 50;
  int snapshot_every = 0;  // 0 = no periodic policy snapshots
  int n_best_of = 4;

  void validate() const;
  // Stable hash over the canonical serialized form.
  std::uint64_t config_hash() const;
};

ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::string& path);

// Applies one sweep value to a copy of the config; the parameter must name a
// sweepable config field.
ExperimentConfig apply_sweep_value(const ExperimentConfig& config,
                                   const std::string& parameter, double value);

struct CellResult {
  std::uint64_t seed = 0;
  std::optional<double> sweep_value;
  bool failed = false;
  std::string error;
  double final_true_reward = 0.0;
  double final_proxy_reward = 0.0;
  double final_kl_to_pi0 = 0.0;
  double final_win_rate = 0.5;
  double kl_measure = 0.0;  // Pareto x-coordinate for this run
  std::string trace_path;
  std::string eval_path;
};

struct RunSummary {
  std::uint64_t config_hash = 0;
  std::string output_dir;
  std::vector<CellResult> cells;
  int failed_cells = 0;
};

// Executes every (seed x sweep value) cell, writes traces/evals/snapshots and
// an atomic summary.json into the output directory. Cells run concurrently
// with isolated state; outputs are deterministic for a fixed config.
RunSummary run_experiment(const ExperimentConfig& config);

struct ParetoPoint {
  double beta = 0.0;
  double final_reward = 0.0;
  double kl_measure = 0.0;
  std::uint64_t seed = 0;
};

struct QuadraticFit {
  bool valid = false;
  // reward ~ c0 + c1 * kl + c2 * kl^2
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;
  double kl_min = 0.0, kl_max = 0.0;
  std::vector<double> residuals;

  double value(double kl) const { return c0 + c1 * kl + c2 * kl * kl; }
  double peak_reward() const;
  double peak_kl() const;
  // Smallest kl in [kl_min, kl_max] whose fitted reward reaches `level`;
  // kl_max when the level is never reached.
  double kl_at_level(double level) const;
};

struct ParetoResult {
  std::vector<ParetoPoint> points;
  QuadraticFit fit;
  RunSummary summary;
};

// Runs the beta sweep of `config` (>= 3 values) and fits the second-order
// reward-vs-KL polynomial on the raw points.
ParetoResult pareto_sweep(const ExperimentConfig& config);

// Least-squares quadratic through the raw points via Householder QR; flagged
// invalid when the design matrix is numerically rank-deficient.
QuadraticFit fit_quadratic(const std::vector<ParetoPoint>& points);

// 95% confidence half-width across seeds: 1.96 * sample std / sqrt(n).
double ci_half_width(std::span<const double> values);

// Comparison tables and plot-data files for runs sharing a task. Throws
// ConfigError when the run directories disagree on the task.
void report(const std::vector<std::string>& run_dirs,
            const std::string& out_dir);

// Interpolated KL for dual-regularized methods, plain KL(pi || pi0)
// otherwise; covered by unit tests on both branches.
double pareto_kl_measure(Algorithm algorithm, double alpha,
                         const TabularPolicy& policy, const TabularPolicy& pi0,
                         const TabularPolicy& pit_prev, const PromptSet& prompts);

// Resolves the output directory: explicit config value, else the environment
// override, else "runs".
std::string resolve_output_dir(const ExperimentConfig& config);

inline constexpr const char* kOutputRootEnvVar = "DARLAB_OUT";

}  // namespace darlab
