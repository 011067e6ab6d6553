#include "darlab/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace darlab {

std::string to_string(RewardFamily family) {
  switch (family) {
    case RewardFamily::kTargetMatch: return "target_match";
    case RewardFamily::kLengthShaped: return "length_shaped";
    case RewardFamily::kHackableProxy: return "hackable_proxy";
    case RewardFamily::kRandomTable: return "random_table";
  }
  throw ParameterError("unknown reward family");
}

RewardFamily reward_family_from_string(const std::string& s) {
  if (s == "target_match") return RewardFamily::kTargetMatch;
  if (s == "length_shaped") return RewardFamily::kLengthShaped;
  if (s == "hackable_proxy") return RewardFamily::kHackableProxy;
  if (s == "random_table") return RewardFamily::kRandomTable;
  throw ConfigError("unknown reward family '" + s + "'");
}

std::string to_string(RewardChannel channel) {
  return channel == RewardChannel::kTrue ? "true" : "proxy";
}

std::map<std::string, double> default_family_params(RewardFamily family) {
  std::map<std::string, double> params{
      {"pi0_correlation", 0.3},
      {"pi0_scale", 1.0},
  };
  switch (family) {
    case RewardFamily::kTargetMatch:
      break;
    case RewardFamily::kRandomTable:
      params["reward_scale"] = 1.0;
      params["reward_offset"] = 0.0;
      break;
    case RewardFamily::kHackableProxy:
      params["exploit_bonus"] = 1.0;
      params["exploit_true_scale"] = 0.3;
      break;
    case RewardFamily::kLengthShaped:
      params["length_coeff_true"] = -0.3;
      params["length_coeff_proxy"] = 0.6;
      break;
  }
  return params;
}

namespace {

double require_param(const TaskSpec& spec, const std::string& key) {
  auto it = spec.family_params.find(key);
  if (it == spec.family_params.end()) {
    throw ConfigError("task '" + spec.name + "' (family " +
                      to_string(spec.reward_family) +
                      ") is missing family_params key '" + key + "'");
  }
  return it->second;
}

// Population z-scores of a reward row; a constant row maps to zeros.
std::vector<double> zscores(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= n;
  double var = 0.0;
  for (double x : v) var += (x - mu) * (x - mu);
  const double sd = std::sqrt(var / n);
  std::vector<double> z(v.size(), 0.0);
  if (sd > 0.0) {
    for (std::size_t i = 0; i < v.size(); ++i) z[i] = (v[i] - mu) / sd;
  }
  return z;
}

bool contains_exploit_token(const std::vector<std::int32_t>& tokens,
                            std::int32_t exploit) {
  return !tokens.empty() && tokens.front() == exploit;
}

}  // namespace

Task make_task(const TaskSpec& spec) {
  if (spec.prompt_count < 1) {
    throw ConfigError("task '" + spec.name + "': prompt_count must be >= 1");
  }
  Task task;
  task.spec = spec;
  task.space = make_space(spec.vocab_size, spec.max_len, spec.mode,
                          spec.enumeration_cap);
  task.prompts = PromptSet::uniform(spec.prompt_count);

  const std::size_t n = task.space->size();
  const int p = spec.prompt_count;
  auto& rm = task.rewards;
  rm.true_reward.assign(p, std::vector<double>(n, 0.0));

  Rng reward_rng(derive_seed(spec.seed, 1));
  switch (spec.reward_family) {
    case RewardFamily::kTargetMatch: {
      for (int x = 0; x < p; ++x) {
        const std::size_t target = reward_rng.index(n);
        rm.true_reward[x][target] = 1.0;
      }
      rm.proxy_reward = rm.true_reward;
      break;
    }
    case RewardFamily::kRandomTable: {
      const double scale = require_param(spec, "reward_scale");
      const double offset = require_param(spec, "reward_offset");
      for (int x = 0; x < p; ++x) {
        for (std::size_t y = 0; y < n; ++y) {
          rm.true_reward[x][y] = offset + scale * reward_rng.uniform();
        }
      }
      rm.proxy_reward = rm.true_reward;
      break;
    }
    case RewardFamily::kLengthShaped: {
      const double ct = require_param(spec, "length_coeff_true");
      const double cp = require_param(spec, "length_coeff_proxy");
      rm.proxy_reward.assign(p, std::vector<double>(n, 0.0));
      for (int x = 0; x < p; ++x) {
        for (std::size_t y = 0; y < n; ++y) {
          const double base = reward_rng.uniform();
          const double frac = static_cast<double>(task.space->response(y).size()) /
                              spec.max_len;
          rm.true_reward[x][y] = base + ct * frac;
          rm.proxy_reward[x][y] = base + cp * frac;
        }
      }
      break;
    }
    case RewardFamily::kHackableProxy: {
      const double bonus = require_param(spec, "exploit_bonus");
      const double true_scale = require_param(spec, "exploit_true_scale");
      const std::int32_t exploit = spec.vocab_size - 1;
      rm.proxy_reward.assign(p, std::vector<double>(n, 0.0));
      for (int x = 0; x < p; ++x) {
        for (std::size_t y = 0; y < n; ++y) {
          const bool hit =
              contains_exploit_token(task.space->response(y), exploit);
          double t = reward_rng.uniform();
          if (hit) t *= true_scale;
          rm.true_reward[x][y] = t;
          rm.proxy_reward[x][y] = t + (hit ? bonus : 0.0);
        }
        // Guarantee the argmax split: the best true response must sit outside
        // the exploit set. Swap true values if a degenerate draw violates it.
        std::size_t best_true = 0, best_clean = n;
        for (std::size_t y = 0; y < n; ++y) {
          if (rm.true_reward[x][y] > rm.true_reward[x][best_true]) best_true = y;
          const bool hit =
              contains_exploit_token(task.space->response(y), exploit);
          if (!hit && (best_clean == n ||
                       rm.true_reward[x][y] > rm.true_reward[x][best_clean])) {
            best_clean = y;
          }
        }
        if (best_clean < n &&
            contains_exploit_token(task.space->response(best_true), exploit)) {
          std::swap(rm.true_reward[x][best_true], rm.true_reward[x][best_clean]);
          rm.proxy_reward[x][best_true] =
              rm.true_reward[x][best_true] + bonus;
          rm.proxy_reward[x][best_clean] = rm.true_reward[x][best_clean];
        }
      }
      // Asserted, not assumed: proxy and true argmax must disagree on at
      // least half the prompts.
      int disagree = 0;
      for (int x = 0; x < p; ++x) {
        const auto t_it = std::max_element(rm.true_reward[x].begin(),
                                           rm.true_reward[x].end());
        const auto p_it = std::max_element(rm.proxy_reward[x].begin(),
                                           rm.proxy_reward[x].end());
        if (t_it - rm.true_reward[x].begin() !=
            p_it - rm.proxy_reward[x].begin()) {
          ++disagree;
        }
      }
      if (2 * disagree < p) {
        throw EvaluationError("hackable_proxy construction failed the argmax "
                              "disagreement check for seed " +
                              std::to_string(spec.seed));
      }
      break;
    }
  }

  // Seeded initialization policy, mildly aligned with the true reward.
  const double corr = require_param(spec, "pi0_correlation");
  const double scale = require_param(spec, "pi0_scale");
  if (!(corr >= -1.0 && corr <= 1.0)) {
    throw ConfigError("pi0_correlation must lie in [-1, 1]");
  }
  Rng policy_rng(derive_seed(spec.seed, 2));
  task.pi0 = TabularPolicy::flat(task.space, p);
  for (int x = 0; x < p; ++x) {
    const auto z = zscores(rm.true_reward[x]);
    for (std::size_t y = 0; y < n; ++y) {
      const double noise = policy_rng.normal();
      task.pi0.logit(x, y) =
          scale * (corr * z[y] + std::sqrt(1.0 - corr * corr) * noise);
    }
  }
  return task;
}

double expected_reward(const TabularPolicy& policy, const RewardModel& rewards,
                       RewardChannel channel, int prompt) {
  const auto& table = rewards.channel(channel);
  if (prompt < 0 || prompt >= static_cast<int>(table.size())) {
    throw IndexError("expected_reward: prompt out of range");
  }
  const Distribution d = policy.distribution(prompt);
  if (d.size() != table[prompt].size()) {
    throw ShapeError("expected_reward: table size mismatch");
  }
  double acc = 0.0;
  for (std::size_t y = 0; y < d.size(); ++y) {
    acc += d.probs[y] * table[prompt][y];
  }
  return acc;
}

double expected_reward(const TabularPolicy& policy, const Task& task,
                       RewardChannel channel) {
  double acc = 0.0;
  for (std::size_t i = 0; i < task.prompts.size(); ++i) {
    acc += task.prompts.weights[i] *
           expected_reward(policy, task.rewards, channel, task.prompts.prompts[i]);
  }
  return acc;
}

double exact_win_rate(const TabularPolicy& policy_a,
                      const TabularPolicy& policy_b, const Task& task,
                      RewardChannel judge_channel) {
  const auto& table = task.rewards.channel(judge_channel);
  // Ties count one half: rate = wins + ties/2 = 1/2 + (wins - losses)/2.
  // The antisymmetric form makes rate(A, A) exactly one half.
  double wins = 0.0, losses = 0.0;
  for (std::size_t i = 0; i < task.prompts.size(); ++i) {
    const int x = task.prompts.prompts[i];
    const Distribution da = policy_a.distribution(x);
    const Distribution db = policy_b.distribution(x);
    const std::size_t n = da.size();

    // Sort responses by judge reward and walk equal-value groups.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return table[x][a] < table[x][b];
    });
    double a_below = 0.0, b_below = 0.0;
    std::size_t g = 0;
    while (g < n) {
      std::size_t h = g;
      double a_mass = 0.0, b_mass = 0.0;
      while (h < n && table[x][order[h]] == table[x][order[g]]) {
        a_mass += da.probs[order[h]];
        b_mass += db.probs[order[h]];
        ++h;
      }
      wins += task.prompts.weights[i] * a_mass * b_below;
      losses += task.prompts.weights[i] * b_mass * a_below;
      a_below += a_mass;
      b_below += b_mass;
      g = h;
    }
  }
  return 0.5 + 0.5 * (wins - losses);
}

WinRate win_rate(const TabularPolicy& policy_a, const TabularPolicy& policy_b,
                 const Task& task, RewardChannel judge_channel, int n_pairs,
                 std::uint64_t seed) {
  if (n_pairs < 1) throw ParameterError("win_rate: n_pairs must be >= 1");
  const auto& table = task.rewards.channel(judge_channel);

  WinRate out;
  out.n_pairs = n_pairs;
  out.exact = exact_win_rate(policy_a, policy_b, task, judge_channel);

  Rng rng(seed);
  std::vector<Distribution> da, db;
  da.reserve(task.prompts.size());
  db.reserve(task.prompts.size());
  for (std::size_t i = 0; i < task.prompts.size(); ++i) {
    da.push_back(policy_a.distribution(task.prompts.prompts[i]));
    db.push_back(policy_b.distribution(task.prompts.prompts[i]));
  }
  double wins = 0.0;
  for (int i = 0; i < n_pairs; ++i) {
    const std::size_t pi = rng.categorical(task.prompts.weights);
    const int x = task.prompts.prompts[pi];
    const std::size_t a = rng.categorical(da[pi].probs);
    const std::size_t b = rng.categorical(db[pi].probs);
    if (table[x][a] > table[x][b]) {
      wins += 1.0;
    } else if (table[x][a] == table[x][b]) {
      wins += 0.5;
    }
  }
  out.sampled = wins / n_pairs;
  return out;
}

std::string reward_tables_to_json(const Task& task) {
  nlohmann::json j;
  j["task"] = task.spec.name;
  j["vocab_size"] = task.spec.vocab_size;
  j["max_len"] = task.spec.max_len;
  j["mode"] = to_string(task.spec.mode);
  j["seed"] = task.spec.seed;
  j["true_reward"] = task.rewards.true_reward;
  j["proxy_reward"] = task.rewards.proxy_reward;
  return j.dump(2);
}

TaskSpec standard_bandit_spec() {
  TaskSpec spec;
  spec.name = "standard_bandit";
  spec.vocab_size = 8;
  spec.max_len = 1;
  spec.prompt_count = 1;
  spec.reward_family = RewardFamily::kRandomTable;
  spec.family_params = default_family_params(spec.reward_family);
  // Incremental-improvement regime: quality spread commensurate with the
  // alpha*beta tilt of the default profile, over a solid base score. Keeps
  // the exact-expectation fixed point non-degenerate and reachable.
  spec.family_params["reward_scale"] = 0.005;
  spec.family_params["reward_offset"] = 0.5;
  spec.seed = 7;
  spec.mode = SpaceMode::kFixedLength;
  return spec;
}

TaskSpec hackable_default_spec() {
  TaskSpec spec;
  spec.name = "hackable_default";
  spec.vocab_size = 4;
  spec.max_len = 3;
  spec.prompt_count = 4;
  spec.reward_family = RewardFamily::kHackableProxy;
  spec.family_params = default_family_params(spec.reward_family);
  spec.seed = 11;
  spec.mode = SpaceMode::kFixedLength;
  return spec;
}

TaskSpec length_task_spec() {
  TaskSpec spec;
  spec.name = "length_task";
  spec.vocab_size = 3;
  spec.max_len = 3;
  spec.prompt_count = 2;
  spec.reward_family = RewardFamily::kLengthShaped;
  spec.family_params = default_family_params(spec.reward_family);
  spec.seed = 13;
  spec.mode = SpaceMode::kEndToken;
  return spec;
}

}  // namespace darlab
