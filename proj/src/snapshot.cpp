#include "darlab/snapshot.hpp"

#include <fstream>

#include <json.hpp>

namespace darlab {

std::string policy_to_json(const TabularPolicy& policy) {
  nlohmann::json j;
  j["mode"] = to_string(policy.mode());
  j["space_mode"] = to_string(policy.space().mode());
  j["vocab_size"] = policy.space().vocab_size();
  j["max_len"] = policy.space().max_len();
  std::vector<int> prompts(policy.prompt_count());
  for (int x = 0; x < policy.prompt_count(); ++x) prompts[x] = x;
  j["prompts"] = prompts;
  nlohmann::json rows = nlohmann::json::array();
  for (int x = 0; x < policy.prompt_count(); ++x) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t i = 0; i < policy.params_per_prompt(); ++i) {
      row.push_back(policy.logit(x, i));
    }
    rows.push_back(std::move(row));
  }
  j["logits"] = std::move(rows);
  return j.dump(2);
}

TabularPolicy policy_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("policy snapshot parse error: ") + e.what());
  }
  for (const char* key :
       {"mode", "space_mode", "vocab_size", "max_len", "prompts", "logits"}) {
    if (!j.contains(key)) {
      throw ConfigError(std::string("policy snapshot missing field '") + key +
                        "'");
    }
  }
  const PolicyMode mode = policy_mode_from_string(j["mode"].get<std::string>());
  const SpaceMode space_mode =
      space_mode_from_string(j["space_mode"].get<std::string>());
  auto space = make_space(j["vocab_size"].get<int>(), j["max_len"].get<int>(),
                          space_mode);
  const int prompt_count = static_cast<int>(j["prompts"].size());
  TabularPolicy policy = mode == PolicyMode::kFlat
                             ? TabularPolicy::flat(space, prompt_count)
                             : TabularPolicy::autoregressive(space, prompt_count);
  const auto& rows = j["logits"];
  if (rows.size() != static_cast<std::size_t>(prompt_count)) {
    throw ConfigError("policy snapshot: logits row count mismatch");
  }
  for (int x = 0; x < prompt_count; ++x) {
    const auto& row = rows[x];
    if (row.size() != policy.params_per_prompt()) {
      throw ConfigError("policy snapshot: logits column count mismatch at "
                        "prompt " + std::to_string(x));
    }
    for (std::size_t i = 0; i < policy.params_per_prompt(); ++i) {
      policy.logit(x, i) = row[i].get<double>();
    }
  }
  policy.check_finite("policy snapshot");
  return policy;
}

void save_policy(const TabularPolicy& policy, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out << policy_to_json(policy) << '\n';
}

TabularPolicy load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return policy_from_json(text);
}

}  // namespace darlab
