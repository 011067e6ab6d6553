#pragma once

// Synthetic alignment tasks: enumerable response spaces with programmable
// reward families, including proxy/true pairs built to disagree (the
// over-optimization setting), plus exact expected-reward and win-rate
// evaluation.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "darlab/policy.hpp"
#include "darlab/response_space.hpp"
#include "darlab/rng.hpp"

namespace darlab {

enum class RewardFamily {
  kTargetMatch,
  kLengthShaped,
  kHackableProxy,
  kRandomTable,
};

enum class RewardChannel { kTrue, kProxy };

std::string to_string(RewardFamily family);
RewardFamily reward_family_from_string(const std::string& s);
std::string to_string(RewardChannel channel);

struct TaskSpec {
  std::string name;
  int vocab_size = 2;
  int max_len = 1;
  int prompt_count = 1;
  RewardFamily reward_family = RewardFamily::kRandomTable;
  std::map<std::string, double> family_params;
  std::uint64_t seed = 0;
  SpaceMode mode = SpaceMode::kFixedLength;
  std::size_t enumeration_cap = kDefaultEnumerationCap;
};

// Required family_params keys (with the shipped defaults) per family.
std::map<std::string, double> default_family_params(RewardFamily family);

struct RewardModel {
  std::vector<std::vector<double>> true_reward;   // [prompt][response]
  std::vector<std::vector<double>> proxy_reward;  // == true unless hackable

  const std::vector<std::vector<double>>& channel(RewardChannel c) const {
    return c == RewardChannel::kTrue ? true_reward : proxy_reward;
  }
};

struct Task {
  TaskSpec spec;
  PromptSet prompts;
  SpacePtr space;
  RewardModel rewards;
  TabularPolicy pi0;
};

// Deterministic task construction from the task seed. pi0 is a softmax over
// seeded logits correlated with the true reward (pi0_correlation), standing
// in for a fine-tuned starting point.
Task make_task(const TaskSpec& spec);

double expected_reward(const TabularPolicy& policy, const RewardModel& rewards,
                       RewardChannel channel, int prompt);

// Prompt-weighted aggregate over the task's prompt set.
double expected_reward(const TabularPolicy& policy, const Task& task,
                       RewardChannel channel);

struct WinRate {
  double exact = 0.5;    // enumerated value
  double sampled = 0.5;  // Monte-Carlo estimate over n_pairs
  int n_pairs = 0;
};

// P[judge prefers a response from A over one from B], ties counted 0.5.
// Pairs are drawn per prompt (prompt picked by weight); the exact value sums
// the product distribution.
WinRate win_rate(const TabularPolicy& policy_a, const TabularPolicy& policy_b,
                 const Task& task, RewardChannel judge_channel, int n_pairs,
                 std::uint64_t seed);

// Enumerated-only variant (no sampling).
double exact_win_rate(const TabularPolicy& policy_a,
                      const TabularPolicy& policy_b, const Task& task,
                      RewardChannel judge_channel);

// Reward tables in the snapshot-style JSON format, for external inspection.
std::string reward_tables_to_json(const Task& task);

// Shipped task presets.
TaskSpec standard_bandit_spec();
TaskSpec hackable_default_spec();
TaskSpec length_task_spec();

}  // namespace darlab
