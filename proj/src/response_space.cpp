#include "darlab/response_space.hpp"

#include <algorithm>

namespace darlab {

std::string to_string(SpaceMode mode) {
  return mode == SpaceMode::kFixedLength ? "fixed_length" : "end_token";
}

SpaceMode space_mode_from_string(const std::string& s) {
  if (s == "fixed_length") return SpaceMode::kFixedLength;
  if (s == "end_token") return SpaceMode::kEndToken;
  throw ConfigError("unknown space mode '" + s +
                    "' (expected fixed_length or end_token)");
}

namespace {

// Checked count of responses: V^L for fixed length, sum of V^l otherwise.
std::size_t space_size_or_throw(int vocab_size, int max_len, SpaceMode mode,
                                std::size_t cap) {
  std::size_t total = 0;
  std::size_t level = 1;
  for (int l = 1; l <= max_len; ++l) {
    if (level > cap / static_cast<std::size_t>(vocab_size)) {
      throw EnumerationError(
          "response space for vocab_size=" + std::to_string(vocab_size) +
          ", max_len=" + std::to_string(max_len) + " exceeds enumeration cap " +
          std::to_string(cap));
    }
    level *= static_cast<std::size_t>(vocab_size);
    if (mode == SpaceMode::kEndToken) {
      total += level;
    } else {
      total = level;
    }
    if (total > cap) {
      throw EnumerationError(
          "response space for vocab_size=" + std::to_string(vocab_size) +
          ", max_len=" + std::to_string(max_len) + " exceeds enumeration cap " +
          std::to_string(cap));
    }
  }
  return total;
}

void emit_recursive(std::vector<std::int32_t>& prefix, int vocab_size,
                    int max_len, SpaceMode mode,
                    std::vector<std::vector<std::int32_t>>& out) {
  if (!prefix.empty() &&
      (mode == SpaceMode::kEndToken ||
       static_cast<int>(prefix.size()) == max_len)) {
    out.push_back(prefix);
  }
  if (static_cast<int>(prefix.size()) == max_len) return;
  for (std::int32_t t = 0; t < vocab_size; ++t) {
    prefix.push_back(t);
    emit_recursive(prefix, vocab_size, max_len, mode, out);
    prefix.pop_back();
  }
}

void emit_contexts(std::vector<std::int32_t>& prefix, int vocab_size,
                   int max_len,
                   std::vector<std::vector<std::int32_t>>& out) {
  out.push_back(prefix);
  if (static_cast<int>(prefix.size()) == max_len - 1) return;
  for (std::int32_t t = 0; t < vocab_size; ++t) {
    prefix.push_back(t);
    emit_contexts(prefix, vocab_size, max_len, out);
    prefix.pop_back();
  }
}

bool lex_less(std::span<const std::int32_t> a,
              std::span<const std::int32_t> b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

ResponseSpace enumerate_responses(int vocab_size, int max_len, SpaceMode mode,
                                  std::size_t cap) {
  if (vocab_size < 1 || max_len < 1) {
    throw ParameterError("enumerate_responses requires vocab_size >= 1 and "
                         "max_len >= 1");
  }
  const std::size_t expected = space_size_or_throw(vocab_size, max_len, mode, cap);

  ResponseSpace space;
  space.vocab_size_ = vocab_size;
  space.max_len_ = max_len;
  space.mode_ = mode;
  space.responses_.reserve(expected);
  std::vector<std::int32_t> prefix;
  emit_recursive(prefix, vocab_size, max_len, mode, space.responses_);

  prefix.clear();
  if (max_len >= 1) emit_contexts(prefix, vocab_size, max_len, space.contexts_);
  return space;
}

const std::vector<std::int32_t>& ResponseSpace::response(
    std::size_t index) const {
  if (index >= responses_.size()) {
    throw IndexError("response index " + std::to_string(index) +
                     " out of range (size " + std::to_string(size()) + ")");
  }
  return responses_[index];
}

bool ResponseSpace::is_truncated(std::size_t index) const {
  if (mode_ != SpaceMode::kEndToken) return false;
  return static_cast<int>(response(index).size()) == max_len_;
}

std::pair<std::size_t, std::size_t> ResponseSpace::descendant_range(
    std::span<const std::int32_t> prefix) const {
  auto lo = std::lower_bound(
      responses_.begin(), responses_.end(), prefix,
      [](const std::vector<std::int32_t>& r, std::span<const std::int32_t> p) {
        return lex_less(r, p);
      });
  // Successor prefix: bump the last token, carrying left. An all-max prefix
  // has no successor, so its range runs to the end.
  std::vector<std::int32_t> succ(prefix.begin(), prefix.end());
  auto hi = responses_.end();
  while (!succ.empty()) {
    if (succ.back() + 1 < vocab_size_) {
      ++succ.back();
      hi = std::lower_bound(
          responses_.begin(), responses_.end(), succ,
          [](const std::vector<std::int32_t>& r,
             const std::vector<std::int32_t>& p) {
            return lex_less(r, p);
          });
      break;
    }
    succ.pop_back();
  }
  return {static_cast<std::size_t>(lo - responses_.begin()),
          static_cast<std::size_t>(hi - responses_.begin())};
}

std::size_t ResponseSpace::index_of(
    std::span<const std::int32_t> tokens) const {
  auto it = std::lower_bound(
      responses_.begin(), responses_.end(), tokens,
      [](const std::vector<std::int32_t>& r, std::span<const std::int32_t> p) {
        return lex_less(r, p);
      });
  if (it == responses_.end() || it->size() != tokens.size() ||
      !std::equal(it->begin(), it->end(), tokens.begin())) {
    throw IndexError("token sequence is not a response of this space");
  }
  return static_cast<std::size_t>(it - responses_.begin());
}

const std::vector<std::int32_t>& ResponseSpace::context(std::size_t id) const {
  if (id >= contexts_.size()) {
    throw IndexError("context id " + std::to_string(id) + " out of range");
  }
  return contexts_[id];
}

std::size_t ResponseSpace::context_of(
    std::span<const std::int32_t> prefix) const {
  auto it = std::lower_bound(
      contexts_.begin(), contexts_.end(), prefix,
      [](const std::vector<std::int32_t>& r, std::span<const std::int32_t> p) {
        return lex_less(r, p);
      });
  if (it == contexts_.end() || it->size() != prefix.size() ||
      !std::equal(it->begin(), it->end(), prefix.begin())) {
    throw IndexError("prefix is not a context of this space");
  }
  return static_cast<std::size_t>(it - contexts_.begin());
}

}  // namespace darlab
