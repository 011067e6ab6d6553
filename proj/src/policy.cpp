#include "darlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace darlab {

PromptSet PromptSet::uniform(int count) {
  if (count < 1) throw ParameterError("prompt set needs at least one prompt");
  PromptSet set;
  set.prompts.resize(count);
  std::iota(set.prompts.begin(), set.prompts.end(), 0);
  set.weights.assign(count, 1.0 / count);
  return set;
}

void PromptSet::validate() const {
  if (prompts.empty()) throw ParameterError("prompt set is empty");
  if (weights.size() != prompts.size()) {
    throw ShapeError("prompt weights size mismatch");
  }
  double sum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ParameterError("prompt weight is negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > kExactTol) {
    throw ParameterError("prompt weights sum to " + std::to_string(sum) +
                         ", expected 1");
  }
}

Distribution Distribution::from_logits(std::span<const double> logits) {
  Distribution d;
  const double log_z = log_sum_exp(logits);
  if (!std::isfinite(log_z)) {
    throw EvaluationError("non-finite normalizer in softmax");
  }
  d.probs.resize(logits.size());
  d.log_probs.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    d.log_probs[i] = logits[i] - log_z;
    d.probs[i] = std::exp(d.log_probs[i]);
  }
  return d;
}

Distribution Distribution::from_probs(std::span<const double> probs) {
  Distribution d;
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ParameterError("negative or NaN probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ParameterError("probabilities sum to " + std::to_string(sum));
  }
  d.probs.assign(probs.begin(), probs.end());
  d.log_probs.resize(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    d.log_probs[i] = std::log(d.probs[i]);
  }
  return d;
}

std::string to_string(PolicyMode mode) {
  return mode == PolicyMode::kFlat ? "flat" : "autoregressive";
}

PolicyMode policy_mode_from_string(const std::string& s) {
  if (s == "flat") return PolicyMode::kFlat;
  if (s == "autoregressive") return PolicyMode::kAutoregressive;
  throw ConfigError("unknown policy mode '" + s + "'");
}

TabularPolicy TabularPolicy::flat(SpacePtr space, int prompt_count,
                                  double init_logit) {
  if (prompt_count < 1) throw ParameterError("prompt_count must be >= 1");
  TabularPolicy p;
  p.mode_ = PolicyMode::kFlat;
  p.space_ = std::move(space);
  p.prompt_count_ = prompt_count;
  p.per_prompt_ = p.space_->size();
  p.logits_.assign(p.per_prompt_ * prompt_count, init_logit);
  return p;
}

TabularPolicy TabularPolicy::autoregressive(SpacePtr space, int prompt_count,
                                            double init_logit) {
  if (prompt_count < 1) throw ParameterError("prompt_count must be >= 1");
  TabularPolicy p;
  p.mode_ = PolicyMode::kAutoregressive;
  p.space_ = std::move(space);
  p.prompt_count_ = prompt_count;
  p.per_prompt_ = p.space_->context_count() *
                  static_cast<std::size_t>(p.space_->tokens_per_context());
  p.logits_.assign(p.per_prompt_ * prompt_count, init_logit);
  return p;
}

void TabularPolicy::check_prompt(int prompt) const {
  if (prompt < 0 || prompt >= prompt_count_) {
    throw IndexError("prompt " + std::to_string(prompt) + " out of range");
  }
}

double& TabularPolicy::logit(int prompt, std::size_t offset) {
  check_prompt(prompt);
  if (offset >= per_prompt_) throw IndexError("logit offset out of range");
  return logits_[prompt * per_prompt_ + offset];
}

double TabularPolicy::logit(int prompt, std::size_t offset) const {
  check_prompt(prompt);
  if (offset >= per_prompt_) throw IndexError("logit offset out of range");
  return logits_[prompt * per_prompt_ + offset];
}

namespace {

// Per-context log normalizers for one prompt of an autoregressive table.
// The EOS column is masked at the empty context: the space has no empty
// response, so termination there is not an option.
std::vector<double> context_log_norms(const ResponseSpace& space,
                                      std::span<const double> row) {
  const int tpc = space.tokens_per_context();
  std::vector<double> norms(space.context_count());
  std::vector<double> buf;
  for (std::size_t c = 0; c < space.context_count(); ++c) {
    const double* base = row.data() + c * tpc;
    int allowed = tpc;
    if (space.mode() == SpaceMode::kEndToken && space.context(c).empty()) {
      allowed = space.vocab_size();
    }
    buf.assign(base, base + allowed);
    norms[c] = log_sum_exp(buf);
  }
  return norms;
}

double ar_log_prob(const ResponseSpace& space, std::span<const double> row,
                   const std::vector<double>& norms, std::size_t response) {
  const auto& tokens = space.response(response);
  const int tpc = space.tokens_per_context();
  double lp = 0.0;
  std::vector<std::int32_t> prefix;
  prefix.reserve(tokens.size());
  for (std::int32_t t : tokens) {
    const std::size_t c = space.context_of(prefix);
    lp += row[c * tpc + t] - norms[c];
    prefix.push_back(t);
  }
  if (space.mode() == SpaceMode::kEndToken &&
      static_cast<int>(tokens.size()) < space.max_len()) {
    const std::size_t c = space.context_of(prefix);
    lp += row[c * tpc + space.end_token()] - norms[c];
  }
  return lp;
}

}  // namespace

Distribution TabularPolicy::distribution(int prompt) const {
  check_prompt(prompt);
  std::span<const double> row(logits_.data() + prompt * per_prompt_,
                              per_prompt_);
  if (mode_ == PolicyMode::kFlat) {
    return Distribution::from_logits(row);
  }
  const auto norms = context_log_norms(*space_, row);
  std::vector<double> log_probs(space_->size());
  for (std::size_t y = 0; y < space_->size(); ++y) {
    log_probs[y] = ar_log_prob(*space_, row, norms, y);
  }
  // Token conditionals multiply out to a normalized distribution already;
  // from_logits just re-exponentiates.
  return Distribution::from_logits(log_probs);
}

double TabularPolicy::log_prob(int prompt, std::size_t response) const {
  check_prompt(prompt);
  if (response >= space_->size()) {
    throw IndexError("response index " + std::to_string(response) +
                     " out of range");
  }
  std::span<const double> row(logits_.data() + prompt * per_prompt_,
                              per_prompt_);
  if (mode_ == PolicyMode::kFlat) {
    return row[response] - log_sum_exp(row);
  }
  const auto norms = context_log_norms(*space_, row);
  return ar_log_prob(*space_, row, norms, response);
}

std::vector<std::size_t> TabularPolicy::sample_k(int prompt, int k,
                                                 Rng& rng) const {
  if (k < 1) throw ParameterError("sample_k requires k >= 1");
  const Distribution d = distribution(prompt);
  std::vector<std::size_t> draws(k);
  for (int i = 0; i < k; ++i) draws[i] = rng.categorical(d.probs);
  return draws;
}

void TabularPolicy::check_finite(const std::string& where) const {
  for (double v : logits_) {
    if (!std::isfinite(v)) {
      throw EvaluationError("non-finite logit in " + where);
    }
  }
}

TabularPolicy flat_from_autoregressive(const TabularPolicy& policy) {
  if (policy.mode() != PolicyMode::kAutoregressive) {
    throw ParameterError("flat_from_autoregressive needs an autoregressive "
                         "policy");
  }
  TabularPolicy flat =
      TabularPolicy::flat(policy.space_ptr(), policy.prompt_count());
  for (int x = 0; x < policy.prompt_count(); ++x) {
    const Distribution d = policy.distribution(x);
    for (std::size_t y = 0; y < d.size(); ++y) {
      flat.logit(x, y) = d.log_probs[y];
    }
  }
  return flat;
}

}  // namespace darlab
