#include "darlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <sstream>

#include <json.hpp>

#include "darlab/kl.hpp"
#include "darlab/snapshot.hpp"
#include "darlab/trace.hpp"

namespace darlab {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::kDar: return "dar";
    case Algorithm::kDaoReinforce: return "dao_reinforce";
    case Algorithm::kDaoIs: return "dao_is";
    case Algorithm::kPpo: return "ppo";
    case Algorithm::kPpoPenalty: return "ppo_penalty";
    case Algorithm::kPpoAlign: return "ppo_align";
    case Algorithm::kDualPpo: return "dual_ppo";
    case Algorithm::kDualPpoClip: return "dual_ppo_clip";
    case Algorithm::kDualMixPpo: return "dual_mix_ppo";
    case Algorithm::kRloo: return "rloo";
    case Algorithm::kGrpo: return "grpo";
    case Algorithm::kBonSft: return "bon_sft";
  }
  throw ParameterError("unknown algorithm");
}

Algorithm algorithm_from_string(const std::string& s) {
  static const std::vector<Algorithm> all = {
      Algorithm::kDar,        Algorithm::kDaoReinforce, Algorithm::kDaoIs,
      Algorithm::kPpo,        Algorithm::kPpoPenalty,   Algorithm::kPpoAlign,
      Algorithm::kDualPpo,    Algorithm::kDualPpoClip,  Algorithm::kDualMixPpo,
      Algorithm::kRloo,       Algorithm::kGrpo,         Algorithm::kBonSft,
  };
  for (Algorithm a : all) {
    if (to_string(a) == s) return a;
  }
  throw ConfigError("unknown algorithm '" + s + "'");
}

bool is_dual_regularized(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::kDar:
    case Algorithm::kDaoReinforce:
    case Algorithm::kDaoIs:
    case Algorithm::kDualPpo:
    case Algorithm::kDualPpoClip:
    case Algorithm::kDualMixPpo:
      return true;
    default:
      return false;
  }
}

namespace {

const std::vector<std::string>& sweepable_fields() {
  static const std::vector<std::string> fields = {
      "alpha",         "beta",       "k_shot",       "w_clip",
      "learning_rate", "steps",      "clip_epsilon", "kl_lambda",
      "shaping_beta",  "ppo_alpha",
  };
  return fields;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("config.seeds must be non-empty");
  reg.validate();
  ppo.validate();
  if (eval_every < 0) throw ConfigError("config.eval_every must be >= 0");
  if (n_best_of < 1) throw ConfigError("config.n_best_of must be >= 1");
  if (sweep) {
    if (sweep->values.empty()) {
      throw ConfigError("config.sweep.values must be non-empty");
    }
    const auto& fields = sweepable_fields();
    if (std::find(fields.begin(), fields.end(), sweep->parameter) ==
        fields.end()) {
      throw ConfigError("config.sweep.parameter '" + sweep->parameter +
                        "' does not name a sweepable config field");
    }
  }
}

namespace {

json task_to_json(const TaskSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["vocab_size"] = spec.vocab_size;
  j["max_len"] = spec.max_len;
  j["prompt_count"] = spec.prompt_count;
  j["reward_family"] = to_string(spec.reward_family);
  j["family_params"] = spec.family_params;
  j["seed"] = spec.seed;
  j["mode"] = to_string(spec.mode);
  j["enumeration_cap"] = spec.enumeration_cap;
  return j;
}

TaskSpec task_from_json(const json& j) {
  TaskSpec spec;
  spec.name = j.value("name", std::string("task"));
  spec.vocab_size = j.value("vocab_size", 2);
  spec.max_len = j.value("max_len", 1);
  spec.prompt_count = j.value("prompt_count", 1);
  spec.reward_family =
      reward_family_from_string(j.value("reward_family", "random_table"));
  spec.family_params = default_family_params(spec.reward_family);
  if (j.contains("family_params")) {
    for (const auto& [key, value] : j.at("family_params").items()) {
      spec.family_params[key] = value.get<double>();
    }
  }
  spec.seed = j.value("seed", 0ULL);
  spec.mode = space_mode_from_string(j.value("mode", "fixed_length"));
  spec.enumeration_cap = j.value("enumeration_cap", kDefaultEnumerationCap);
  return spec;
}

json reg_to_json(const RegConfig& r) {
  json j;
  j["alpha"] = r.alpha;
  j["beta"] = r.beta;
  j["k_shot"] = r.k_shot;
  j["w_clip"] = r.w_clip;
  j["learning_rate"] = r.learning_rate;
  j["steps"] = r.steps;
  j["batch_prompts"] = r.batch_prompts;
  j["norm_epsilon"] = r.norm_epsilon;
  j["updates_per_batch"] = r.updates_per_batch;
  j["exact_expectation"] = r.exact_expectation;
  j["recenter"] = r.recenter;
  return j;
}

RegConfig reg_from_json(const json& j) {
  RegConfig r;
  r.alpha = j.value("alpha", r.alpha);
  r.beta = j.value("beta", r.beta);
  r.k_shot = j.value("k_shot", r.k_shot);
  r.w_clip = j.value("w_clip", r.w_clip);
  r.learning_rate = j.value("learning_rate", r.learning_rate);
  r.steps = j.value("steps", r.steps);
  r.batch_prompts = j.value("batch_prompts", r.batch_prompts);
  r.norm_epsilon = j.value("norm_epsilon", r.norm_epsilon);
  r.updates_per_batch = j.value("updates_per_batch", r.updates_per_batch);
  r.exact_expectation = j.value("exact_expectation", r.exact_expectation);
  r.recenter = j.value("recenter", r.recenter);
  return r;
}

json ppo_to_json(const PPOConfig& p) {
  json j;
  j["clip_epsilon"] = p.clip_epsilon;
  j["kl_lambda"] = p.kl_lambda;
  j["shaping_beta"] = p.shaping_beta;
  j["alpha"] = p.alpha;
  j["updates_per_batch"] = p.updates_per_batch;
  j["missing_eos_penalty"] = p.missing_eos_penalty;
  return j;
}

PPOConfig ppo_from_json(const json& j) {
  PPOConfig p;
  p.clip_epsilon = j.value("clip_epsilon", p.clip_epsilon);
  p.kl_lambda = j.value("kl_lambda", p.kl_lambda);
  p.shaping_beta = j.value("shaping_beta", p.shaping_beta);
  p.alpha = j.value("alpha", p.alpha);
  p.updates_per_batch = j.value("updates_per_batch", p.updates_per_batch);
  p.missing_eos_penalty = j.value("missing_eos_penalty", p.missing_eos_penalty);
  return p;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& config) {
  json j;
  j["task"] = task_to_json(config.task);
  j["algorithm"] = to_string(config.algorithm);
  j["reg"] = reg_to_json(config.reg);
  j["ppo"] = ppo_to_json(config.ppo);
  j["seeds"] = config.seeds;
  if (config.sweep) {
    j["sweep"] = {{"parameter", config.sweep->parameter},
                  {"values", config.sweep->values}};
  }
  j["output_dir"] = config.output_dir;
  j["eval_every"] = config.eval_every;
  j["snapshot_every"] = config.snapshot_every;
  j["n_best_of"] = config.n_best_of;
  return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  ExperimentConfig config;
  if (j.contains("task")) config.task = task_from_json(j.at("task"));
  if (j.contains("algorithm")) {
    config.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
  }
  if (j.contains("reg")) config.reg = reg_from_json(j.at("reg"));
  if (j.contains("ppo")) config.ppo = ppo_from_json(j.at("ppo"));
  if (j.contains("seeds")) {
    config.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  }
  if (j.contains("sweep") && !j.at("sweep").is_null()) {
    SweepSpec sweep;
    sweep.parameter = j.at("sweep").at("parameter").get<std::string>();
    sweep.values = j.at("sweep").at("values").get<std::vector<double>>();
    config.sweep = sweep;
  }
  config.output_dir = j.value("output_dir", std::string());
  config.eval_every = j.value("eval_every", config.eval_every);
  config.snapshot_every = j.value("snapshot_every", config.snapshot_every);
  config.n_best_of = j.value("n_best_of", config.n_best_of);
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  return config_from_json(read_text_file(path));
}

std::uint64_t ExperimentConfig::config_hash() const {
  // The output location is not part of the experiment identity; a rerun
  // into a different directory must hash (and trace) identically.
  ExperimentConfig canonical = *this;
  canonical.output_dir.clear();
  return fnv1a(config_to_json(canonical));
}

ExperimentConfig apply_sweep_value(const ExperimentConfig& config,
                                   const std::string& parameter, double value) {
  ExperimentConfig out = config;
  if (parameter == "alpha") {
    out.reg.alpha = value;
  } else if (parameter == "beta") {
    out.reg.beta = value;
    out.ppo.shaping_beta = value;  // beta means regularization strength
  } else if (parameter == "k_shot") {
    out.reg.k_shot = static_cast<int>(value);
  } else if (parameter == "w_clip") {
    out.reg.w_clip = value;
  } else if (parameter == "learning_rate") {
    out.reg.learning_rate = value;
  } else if (parameter == "steps") {
    out.reg.steps = static_cast<int>(value);
  } else if (parameter == "clip_epsilon") {
    out.ppo.clip_epsilon = value;
  } else if (parameter == "kl_lambda") {
    out.ppo.kl_lambda = value;
  } else if (parameter == "shaping_beta") {
    out.ppo.shaping_beta = value;
  } else if (parameter == "ppo_alpha") {
    out.ppo.alpha = value;
  } else {
    throw ConfigError("unknown sweep parameter '" + parameter + "'");
  }
  return out;
}

std::string resolve_output_dir(const ExperimentConfig& config) {
  if (!config.output_dir.empty()) return config.output_dir;
  if (const char* env = std::getenv(kOutputRootEnvVar); env && *env) {
    return std::string(env);
  }
  return "runs";
}

double pareto_kl_measure(Algorithm algorithm, double alpha,
                         const TabularPolicy& policy, const TabularPolicy& pi0,
                         const TabularPolicy& pit_prev,
                         const PromptSet& prompts) {
  double kl0 = 0.0, klt = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const int x = prompts.prompts[i];
    const Distribution d = policy.distribution(x);
    kl0 += prompts.weights[i] * kl_divergence(d, pi0.distribution(x));
    if (is_dual_regularized(algorithm)) {
      klt += prompts.weights[i] * kl_divergence(d, pit_prev.distribution(x));
    }
  }
  if (!is_dual_regularized(algorithm)) return kl0;
  return alpha * kl0 + (1.0 - alpha) * klt;
}

namespace {

TrainResult dispatch_train(const ExperimentConfig& config, const Task& task,
                           std::uint64_t seed) {
  switch (config.algorithm) {
    case Algorithm::kDar:
      return dar_train(task, config.reg, seed, config.eval_every,
                       config.snapshot_every);
    case Algorithm::kDaoReinforce:
      return dao_train(task, config.reg, DaoStyle::kReinforce, seed,
                       config.eval_every);
    case Algorithm::kDaoIs:
      return dao_train(task, config.reg, DaoStyle::kImportanceSampling, seed,
                       config.eval_every);
    case Algorithm::kPpo:
      return ppo_train(task, config.reg, config.ppo, PPOVariant::kPpo, seed,
                       config.eval_every);
    case Algorithm::kPpoPenalty:
      return ppo_train(task, config.reg, config.ppo, PPOVariant::kPpoPenalty,
                       seed, config.eval_every);
    case Algorithm::kPpoAlign:
      return ppo_train(task, config.reg, config.ppo, PPOVariant::kPpoAlign,
                       seed, config.eval_every);
    case Algorithm::kDualPpo:
      return ppo_train(task, config.reg, config.ppo, PPOVariant::kDual, seed,
                       config.eval_every);
    case Algorithm::kDualPpoClip:
      return ppo_train(task, config.reg, config.ppo, PPOVariant::kDualClip,
                       seed, config.eval_every);
    case Algorithm::kDualMixPpo:
      return ppo_train(task, config.reg, config.ppo, PPOVariant::kDualMix,
                       seed, config.eval_every);
    case Algorithm::kRloo:
      return rloo_train(task, config.reg, config.ppo.shaping_beta, seed,
                        config.eval_every);
    case Algorithm::kGrpo:
      return grpo_train(task, config.reg, config.ppo.shaping_beta, seed,
                        config.eval_every);
    case Algorithm::kBonSft:
      return bon_train(task, config.reg, config.n_best_of, seed,
                       config.eval_every);
  }
  throw ParameterError("unknown algorithm");
}

double dual_alpha_of(const ExperimentConfig& config) {
  switch (config.algorithm) {
    case Algorithm::kDualPpo:
    case Algorithm::kDualPpoClip:
    case Algorithm::kDualMixPpo:
      return config.ppo.alpha;
    default:
      return config.reg.alpha;
  }
}

std::string cell_tag(const ExperimentConfig& config,
                     const std::optional<double>& sweep_value,
                     std::uint64_t seed) {
  std::ostringstream tag;
  tag << to_string(config.algorithm);
  if (sweep_value) {
    tag << '_' << config.sweep->parameter << format_double(*sweep_value);
  }
  tag << "_seed" << seed;
  return tag.str();
}

CellResult run_cell(const ExperimentConfig& base_config,
                    const std::optional<double>& sweep_value,
                    std::uint64_t seed, const std::string& out_dir) {
  CellResult cell;
  cell.seed = seed;
  cell.sweep_value = sweep_value;
  ExperimentConfig config = base_config;
  if (sweep_value) {
    config = apply_sweep_value(base_config, base_config.sweep->parameter,
                               *sweep_value);
  }
  const std::string tag = cell_tag(config, sweep_value, seed);
  try {
    const Task task = make_task(config.task);
    const TrainResult result = dispatch_train(config, task, seed);

    std::vector<std::string> comments = {
        "config_hash=" + std::to_string(base_config.config_hash()),
        "seed=" + std::to_string(seed),
        "algorithm=" + to_string(config.algorithm),
    };
    if (sweep_value) {
      comments.push_back(config.sweep->parameter + "=" +
                         format_double(*sweep_value));
    }
    const bool with_variant = config.algorithm != Algorithm::kDar;
    const std::optional<std::string> variant =
        with_variant ? std::optional<std::string>(to_string(config.algorithm))
                     : std::nullopt;
    cell.trace_path = "trace_" + tag + ".csv";
    write_text_file((fs::path(out_dir) / cell.trace_path).string(),
                    trace_to_csv(result.trace, comments, variant));
    cell.eval_path = "eval_" + tag + ".csv";
    write_text_file((fs::path(out_dir) / cell.eval_path).string(),
                    evals_to_csv(result.evals, comments));
    save_policy(result.final_policy,
                (fs::path(out_dir) / ("policy_" + tag + ".json")).string());
    save_policy(result.pit_prev,
                (fs::path(out_dir) / ("pit_prev_" + tag + ".json")).string());
    for (const auto& [snap_step, snap_policy] : result.snapshots) {
      save_policy(snap_policy,
                  (fs::path(out_dir) /
                   ("policy_" + tag + "_step" + std::to_string(snap_step) +
                    ".json"))
                      .string());
    }

    cell.final_true_reward =
        expected_reward(result.final_policy, task, RewardChannel::kTrue);
    cell.final_proxy_reward =
        expected_reward(result.final_policy, task, RewardChannel::kProxy);
    cell.final_kl_to_pi0 =
        result.trace.empty() ? 0.0 : result.trace.back().kl_to_pi0;
    cell.final_win_rate = exact_win_rate(result.final_policy, task.pi0, task,
                                         RewardChannel::kTrue);
    cell.kl_measure = pareto_kl_measure(
        config.algorithm, dual_alpha_of(config), result.final_policy, task.pi0,
        result.pit_prev, task.prompts);
  } catch (const std::exception& e) {
    cell.failed = true;
    cell.error = e.what();
  }
  return cell;
}

json summary_to_json(const ExperimentConfig& config, const RunSummary& summary) {
  json j;
  j["config_hash"] = summary.config_hash;
  j["algorithm"] = to_string(config.algorithm);
  j["task"] = task_to_json(config.task);
  j["failed_cells"] = summary.failed_cells;
  json cells = json::array();
  for (const auto& cell : summary.cells) {
    json c;
    c["seed"] = cell.seed;
    if (cell.sweep_value) {
      c["sweep_value"] = *cell.sweep_value;
    }
    c["failed"] = cell.failed;
    if (cell.failed) {
      c["error"] = cell.error;
    } else {
      c["final_true_reward"] = cell.final_true_reward;
      c["final_proxy_reward"] = cell.final_proxy_reward;
      c["final_kl_to_pi0"] = cell.final_kl_to_pi0;
      c["final_win_rate"] = cell.final_win_rate;
      c["kl_measure"] = cell.kl_measure;
      c["trace"] = cell.trace_path;
      c["eval"] = cell.eval_path;
    }
    cells.push_back(std::move(c));
  }
  j["cells"] = std::move(cells);

  // Aggregates across seeds, per sweep value (normal-approximation 95% CI).
  json aggregates = json::array();
  std::vector<std::optional<double>> values;
  for (const auto& cell : summary.cells) {
    if (std::find(values.begin(), values.end(), cell.sweep_value) ==
        values.end()) {
      values.push_back(cell.sweep_value);
    }
  }
  for (const auto& value : values) {
    std::vector<double> true_r, proxy_r, kls, wins;
    for (const auto& cell : summary.cells) {
      if (cell.sweep_value != value || cell.failed) continue;
      true_r.push_back(cell.final_true_reward);
      proxy_r.push_back(cell.final_proxy_reward);
      kls.push_back(cell.kl_measure);
      wins.push_back(cell.final_win_rate);
    }
    if (true_r.empty()) continue;
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    json a;
    if (value) a["sweep_value"] = *value;
    a["n"] = true_r.size();
    a["final_true_reward_mean"] = mean(true_r);
    a["final_true_reward_ci95"] = ci_half_width(true_r);
    a["final_proxy_reward_mean"] = mean(proxy_r);
    a["final_proxy_reward_ci95"] = ci_half_width(proxy_r);
    a["kl_measure_mean"] = mean(kls);
    a["kl_measure_ci95"] = ci_half_width(kls);
    a["final_win_rate_mean"] = mean(wins);
    a["final_win_rate_ci95"] = ci_half_width(wins);
    aggregates.push_back(std::move(a));
  }
  j["aggregates"] = std::move(aggregates);
  return j;
}

}  // namespace

double ci_half_width(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);
  return 1.96 * std::sqrt(var) / std::sqrt(static_cast<double>(n));
}

RunSummary run_experiment(const ExperimentConfig& config) {
  config.validate();
  RunSummary summary;
  summary.config_hash = config.config_hash();
  summary.output_dir = resolve_output_dir(config);
  fs::create_directories(summary.output_dir);

  write_text_file((fs::path(summary.output_dir) / "config.json").string(),
                  config_to_json(config));
  write_text_file((fs::path(summary.output_dir) / "task_rewards.json").string(),
                  reward_tables_to_json(make_task(config.task)) + "\n");

  std::vector<std::optional<double>> sweep_values;
  if (config.sweep) {
    for (double v : config.sweep->values) sweep_values.emplace_back(v);
  } else {
    sweep_values.emplace_back(std::nullopt);
  }

  std::vector<std::future<CellResult>> futures;
  for (const auto& value : sweep_values) {
    for (std::uint64_t seed : config.seeds) {
      futures.push_back(std::async(std::launch::async, run_cell, config, value,
                                   seed, summary.output_dir));
    }
  }
  for (auto& f : futures) {
    summary.cells.push_back(f.get());
    if (summary.cells.back().failed) ++summary.failed_cells;
  }

  const std::string summary_path =
      (fs::path(summary.output_dir) / "summary.json").string();
  const std::string tmp_path = summary_path + ".tmp";
  write_text_file(tmp_path, summary_to_json(config, summary).dump(2) + "\n");
  fs::rename(tmp_path, summary_path);
  return summary;
}

double QuadraticFit::peak_reward() const { return value(peak_kl()); }

double QuadraticFit::peak_kl() const {
  double best_kl = kl_min;
  double best = value(kl_min);
  if (value(kl_max) > best) {
    best = value(kl_max);
    best_kl = kl_max;
  }
  if (c2 < 0.0) {
    const double vertex = -c1 / (2.0 * c2);
    if (vertex > kl_min && vertex < kl_max && value(vertex) > best) {
      best_kl = vertex;
    }
  }
  return best_kl;
}

double QuadraticFit::kl_at_level(double level) const {
  constexpr int kGrid = 4096;
  for (int i = 0; i <= kGrid; ++i) {
    const double kl = kl_min + (kl_max - kl_min) * i / kGrid;
    if (value(kl) >= level) return kl;
  }
  return kl_max;
}

QuadraticFit fit_quadratic(const std::vector<ParetoPoint>& points) {
  QuadraticFit fit;
  const std::size_t n = points.size();
  if (n < 3) return fit;

  // Householder QR on the n x 3 design matrix.
  std::vector<std::vector<double>> a(n, std::vector<double>(3));
  std::vector<double> y(n);
  fit.kl_min = points[0].kl_measure;
  fit.kl_max = points[0].kl_measure;
  for (std::size_t i = 0; i < n; ++i) {
    const double kl = points[i].kl_measure;
    a[i] = {1.0, kl, kl * kl};
    y[i] = points[i].final_reward;
    fit.kl_min = std::min(fit.kl_min, kl);
    fit.kl_max = std::max(fit.kl_max, kl);
  }
  double col_scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) col_scale = std::max(col_scale, std::abs(a[i][k]));
  }
  for (int k = 0; k < 3; ++k) {
    double norm = 0.0;
    for (std::size_t i = k; i < n; ++i) norm += a[i][k] * a[i][k];
    norm = std::sqrt(norm);
    if (norm <= 1e-12 * std::max(1.0, col_scale)) {
      return fit;  // rank-deficient: raw points only
    }
    const double alpha = a[k][k] >= 0.0 ? -norm : norm;
    std::vector<double> v(n, 0.0);
    v[k] = a[k][k] - alpha;
    for (std::size_t i = k + 1; i < n; ++i) v[i] = a[i][k];
    double vnorm2 = 0.0;
    for (std::size_t i = k; i < n; ++i) vnorm2 += v[i] * v[i];
    if (vnorm2 > 0.0) {
      for (int j = k; j < 3; ++j) {
        double dot = 0.0;
        for (std::size_t i = k; i < n; ++i) dot += v[i] * a[i][j];
        const double f = 2.0 * dot / vnorm2;
        for (std::size_t i = k; i < n; ++i) a[i][j] -= f * v[i];
      }
      double dot = 0.0;
      for (std::size_t i = k; i < n; ++i) dot += v[i] * y[i];
      const double f = 2.0 * dot / vnorm2;
      for (std::size_t i = k; i < n; ++i) y[i] -= f * v[i];
    }
    if (std::abs(a[k][k]) <= 1e-12 * std::max(1.0, col_scale)) {
      return fit;
    }
  }
  double c[3];
  for (int k = 2; k >= 0; --k) {
    double s = y[k];
    for (int j = k + 1; j < 3; ++j) s -= a[k][j] * c[j];
    c[k] = s / a[k][k];
  }
  fit.c0 = c[0];
  fit.c1 = c[1];
  fit.c2 = c[2];
  fit.valid = true;
  fit.residuals.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    fit.residuals[i] = points[i].final_reward - fit.value(points[i].kl_measure);
  }
  return fit;
}

ParetoResult pareto_sweep(const ExperimentConfig& config) {
  if (!config.sweep || config.sweep->parameter != "beta") {
    throw ConfigError("pareto_sweep requires a beta sweep");
  }
  if (config.sweep->values.size() < 3) {
    throw ConfigError("pareto_sweep requires at least 3 beta values");
  }
  ParetoResult result;
  result.summary = run_experiment(config);
  for (const auto& cell : result.summary.cells) {
    if (cell.failed || !cell.sweep_value) continue;
    ParetoPoint p;
    p.beta = *cell.sweep_value;
    p.final_reward = cell.final_true_reward;
    p.kl_measure = cell.kl_measure;
    p.seed = cell.seed;
    result.points.push_back(p);
  }
  result.fit = fit_quadratic(result.points);

  // Persist the frontier next to the traces.
  json j;
  j["config_hash"] = config.config_hash();
  j["fit_valid"] = result.fit.valid;
  if (result.fit.valid) {
    j["coefficients"] = {result.fit.c0, result.fit.c1, result.fit.c2};
    j["peak_reward"] = result.fit.peak_reward();
    j["peak_kl"] = result.fit.peak_kl();
  }
  json points = json::array();
  for (const auto& p : result.points) {
    points.push_back({{"beta", p.beta},
                      {"final_reward", p.final_reward},
                      {"kl_measure", p.kl_measure},
                      {"seed", p.seed}});
  }
  j["points"] = std::move(points);
  write_text_file(
      (fs::path(result.summary.output_dir) / "pareto.json").string(),
      j.dump(2) + "\n");
  return result;
}

namespace {

struct LoadedRun {
  json summary;
  json config;
  std::string dir;
};

std::vector<std::vector<std::string>> parse_csv(const std::string& body) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(body);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace

void report(const std::vector<std::string>& run_dirs,
            const std::string& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report: no run directories given");
  std::vector<LoadedRun> runs;
  for (const auto& dir : run_dirs) {
    LoadedRun run;
    run.dir = dir;
    run.summary = json::parse(read_text_file(
        (fs::path(dir) / "summary.json").string()));
    run.config =
        json::parse(read_text_file((fs::path(dir) / "config.json").string()));
    runs.push_back(std::move(run));
  }
  const json& task0 = runs.front().config.at("task");
  for (const auto& run : runs) {
    if (run.config.at("task") != task0) {
      throw ConfigError("report: run '" + run.dir +
                        "' was produced on a different task");
    }
  }
  fs::create_directories(out_dir);

  // Final metrics, one row per cell; column order is fixed.
  {
    std::ostringstream out;
    out << "algorithm,sweep_value,seed,final_true_reward,final_proxy_reward,"
           "final_kl_to_pi0,kl_measure,final_win_rate\n";
    for (const auto& run : runs) {
      const std::string algo = run.summary.at("algorithm").get<std::string>();
      for (const auto& cell : run.summary.at("cells")) {
        if (cell.value("failed", false)) continue;
        out << algo << ',';
        if (cell.contains("sweep_value")) {
          out << format_double(cell.at("sweep_value").get<double>());
        }
        out << ',' << cell.at("seed").get<std::uint64_t>() << ','
            << format_double(cell.at("final_true_reward").get<double>()) << ','
            << format_double(cell.at("final_proxy_reward").get<double>()) << ','
            << format_double(cell.at("final_kl_to_pi0").get<double>()) << ','
            << format_double(cell.at("kl_measure").get<double>()) << ','
            << format_double(cell.at("final_win_rate").get<double>()) << '\n';
      }
    }
    write_text_file((fs::path(out_dir) / "final_metrics.csv").string(),
                    out.str());
  }

  // Reward-vs-step curves concatenated from the traces.
  {
    std::ostringstream out;
    out << "algorithm,sweep_value,seed,step,expected_true_reward,"
           "expected_proxy_reward,kl_to_pi0\n";
    for (const auto& run : runs) {
      const std::string algo = run.summary.at("algorithm").get<std::string>();
      for (const auto& cell : run.summary.at("cells")) {
        if (cell.value("failed", false) || !cell.contains("trace")) continue;
        const auto rows = parse_csv(read_text_file(
            (fs::path(run.dir) / cell.at("trace").get<std::string>())
                .string()));
        if (rows.empty()) continue;
        const auto& header = rows.front();
        auto col = [&](const std::string& name) {
          for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
          }
          throw ConfigError("report: trace missing column " + name);
        };
        const std::size_t c_step = col("step");
        const std::size_t c_true = col("expected_true_reward");
        const std::size_t c_proxy = col("expected_proxy_reward");
        const std::size_t c_kl = col("kl_to_pi0");
        for (std::size_t r = 1; r < rows.size(); ++r) {
          out << algo << ',';
          if (cell.contains("sweep_value")) {
            out << format_double(cell.at("sweep_value").get<double>());
          }
          out << ',' << cell.at("seed").get<std::uint64_t>() << ','
              << rows[r][c_step] << ',' << rows[r][c_true] << ','
              << rows[r][c_proxy] << ',' << rows[r][c_kl] << '\n';
        }
      }
    }
    write_text_file((fs::path(out_dir) / "curves_reward_vs_step.csv").string(),
                    out.str());
  }

  // Win-rate-vs-step curves from the eval files.
  {
    std::ostringstream out;
    out << "algorithm,sweep_value,seed,step,win_rate_vs_pi0\n";
    for (const auto& run : runs) {
      const std::string algo = run.summary.at("algorithm").get<std::string>();
      for (const auto& cell : run.summary.at("cells")) {
        if (cell.value("failed", false) || !cell.contains("eval")) continue;
        const auto rows = parse_csv(read_text_file(
            (fs::path(run.dir) / cell.at("eval").get<std::string>())
                .string()));
        if (rows.size() < 2) continue;
        const auto& header = rows.front();
        std::size_t c_step = 0, c_win = 0;
        for (std::size_t i = 0; i < header.size(); ++i) {
          if (header[i] == "step") c_step = i;
          if (header[i] == "win_rate_vs_pi0") c_win = i;
        }
        for (std::size_t r = 1; r < rows.size(); ++r) {
          out << algo << ',';
          if (cell.contains("sweep_value")) {
            out << format_double(cell.at("sweep_value").get<double>());
          }
          out << ',' << cell.at("seed").get<std::uint64_t>() << ','
              << rows[r][c_step] << ',' << rows[r][c_win] << '\n';
        }
      }
    }
    write_text_file((fs::path(out_dir) / "curves_winrate_vs_step.csv").string(),
                    out.str());
  }

  // Reward-vs-KL scatter (the Pareto raw points).
  {
    std::ostringstream out;
    out << "algorithm,sweep_value,seed,kl_measure,final_true_reward\n";
    for (const auto& run : runs) {
      const std::string algo = run.summary.at("algorithm").get<std::string>();
      for (const auto& cell : run.summary.at("cells")) {
        if (cell.value("failed", false)) continue;
        out << algo << ',';
        if (cell.contains("sweep_value")) {
          out << format_double(cell.at("sweep_value").get<double>());
        }
        out << ',' << cell.at("seed").get<std::uint64_t>() << ','
            << format_double(cell.at("kl_measure").get<double>()) << ','
            << format_double(cell.at("final_true_reward").get<double>())
            << '\n';
      }
    }
    write_text_file((fs::path(out_dir) / "reward_vs_kl.csv").string(),
                    out.str());
  }
}

}  // namespace darlab
