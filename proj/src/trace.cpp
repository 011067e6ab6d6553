#include "darlab/trace.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace darlab {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw EvaluationError("double formatting failed");
  return std::string(buf, ptr);
}

std::string trace_to_csv(const std::vector<TraceRow>& rows,
                         const std::vector<std::string>& comments,
                         const std::optional<std::string>& variant) {
  std::ostringstream out;
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "step";
  if (variant) out << ",variant";
  out << ",expected_true_reward,expected_proxy_reward,kl_to_pi0,"
         "kl_to_pit_prev,mean_w_final,clip_fraction,loss\n";
  for (const auto& r : rows) {
    out << r.step;
    if (variant) out << ',' << *variant;
    out << ',' << format_double(r.expected_true_reward) << ','
        << format_double(r.expected_proxy_reward) << ','
        << format_double(r.kl_to_pi0) << ',' << format_double(r.kl_to_pit_prev)
        << ',' << format_double(r.mean_w_final) << ','
        << format_double(r.clip_fraction) << ',' << format_double(r.loss)
        << '\n';
  }
  return out.str();
}

std::string evals_to_csv(const std::vector<EvalRow>& rows,
                         const std::vector<std::string>& comments) {
  std::ostringstream out;
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "step,win_rate_vs_pi0,expected_true_reward,expected_proxy_reward\n";
  for (const auto& r : rows) {
    out << r.step << ',' << format_double(r.win_rate_vs_pi0) << ','
        << format_double(r.expected_true_reward) << ','
        << format_double(r.expected_proxy_reward) << '\n';
  }
  return out.str();
}

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out << body;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace darlab
