#pragma once

// Per-step training traces and their on-disk form: delimiter-separated text
// with a header row, doubles encoded shortest-round-trip.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "darlab/policy.hpp"

namespace darlab {

struct TraceRow {
  int step = 0;
  double expected_true_reward = 0.0;
  double expected_proxy_reward = 0.0;
  double kl_to_pi0 = 0.0;
  double kl_to_pit_prev = 0.0;
  double mean_w_final = 0.0;
  double clip_fraction = 0.0;
  double loss = 0.0;
};

struct EvalRow {
  int step = 0;
  double win_rate_vs_pi0 = 0.5;
  double expected_true_reward = 0.0;
  double expected_proxy_reward = 0.0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  std::vector<EvalRow> evals;
  TabularPolicy final_policy;
  TabularPolicy pit_prev;  // last pre-update snapshot of the run
  // Periodic policy snapshots (step, policy), when requested.
  std::vector<std::pair<int, TabularPolicy>> snapshots;
};

// Shortest decimal encoding that round-trips the exact double.
std::string format_double(double v);

// CSV body (comment lines, header, rows). `variant` adds a constant column
// for the baseline trainers; DAR traces omit it.
std::string trace_to_csv(const std::vector<TraceRow>& rows,
                         const std::vector<std::string>& comments,
                         const std::optional<std::string>& variant);
std::string evals_to_csv(const std::vector<EvalRow>& rows,
                         const std::vector<std::string>& comments);

void write_text_file(const std::string& path, const std::string& body);
std::string read_text_file(const std::string& path);

}  // namespace darlab
