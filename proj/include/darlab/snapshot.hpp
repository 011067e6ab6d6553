#pragma once

// Policy snapshot files: JSON with shortest-round-trip doubles, so a policy
// reloads bit-exactly.

#include <string>

#include "darlab/policy.hpp"

namespace darlab {

std::string policy_to_json(const TabularPolicy& policy);
TabularPolicy policy_from_json(const std::string& text);

void save_policy(const TabularPolicy& policy, const std::string& path);
TabularPolicy load_policy(const std::string& path);

}  // namespace darlab
