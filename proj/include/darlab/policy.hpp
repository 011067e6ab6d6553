#pragma once

// Tabular softmax policies over an enumerated response space. A policy is a
// logit table, flat (one logit per response) or autoregressive (one logit per
// token in context); both induce the same kind of per-prompt distribution.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "darlab/common.hpp"
#include "darlab/response_space.hpp"
#include "darlab/rng.hpp"

namespace darlab {

struct PromptSet {
  std::vector<std::int32_t> prompts;
  std::vector<double> weights;  // nonnegative, sum to 1

  static PromptSet uniform(int count);
  void validate() const;
  std::size_t size() const { return prompts.size(); }
};

// Evaluation snapshot of a policy at one prompt: matched probs / log_probs
// over the response space.
struct Distribution {
  std::vector<double> probs;
  std::vector<double> log_probs;

  static Distribution from_logits(std::span<const double> logits);
  static Distribution from_probs(std::span<const double> probs);
  std::size_t size() const { return probs.size(); }
};

enum class PolicyMode { kFlat, kAutoregressive };

std::string to_string(PolicyMode mode);
PolicyMode policy_mode_from_string(const std::string& s);

class TabularPolicy {
 public:
  TabularPolicy() = default;

  static TabularPolicy flat(SpacePtr space, int prompt_count,
                            double init_logit = 0.0);
  static TabularPolicy autoregressive(SpacePtr space, int prompt_count,
                                      double init_logit = 0.0);

  PolicyMode mode() const { return mode_; }
  const ResponseSpace& space() const { return *space_; }
  SpacePtr space_ptr() const { return space_; }
  int prompt_count() const { return prompt_count_; }

  // Raw parameter vector. Flat layout: [prompt * num_responses + response].
  // Autoregressive: [prompt * contexts * tokens_per_context
  //                  + context * tokens_per_context + token].
  std::vector<double>& params() { return logits_; }
  const std::vector<double>& params() const { return logits_; }
  std::size_t params_per_prompt() const { return per_prompt_; }

  double& logit(int prompt, std::size_t offset);
  double logit(int prompt, std::size_t offset) const;

  Distribution distribution(int prompt) const;
  double log_prob(int prompt, std::size_t response) const;

  // k i.i.d. draws from the induced distribution; deterministic given rng.
  std::vector<std::size_t> sample_k(int prompt, int k, Rng& rng) const;

  void check_finite(const std::string& where) const;

 private:
  PolicyMode mode_ = PolicyMode::kFlat;
  SpacePtr space_;
  int prompt_count_ = 0;
  std::size_t per_prompt_ = 0;
  std::vector<double> logits_;

  void check_prompt(int prompt) const;
};

// Converts an autoregressive policy to the flat policy inducing the same
// per-response probabilities (flat logit = log probability).
TabularPolicy flat_from_autoregressive(const TabularPolicy& policy);

}  // namespace darlab
