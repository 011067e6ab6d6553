#pragma once

// Exhaustive enumeration of the responses a task admits. The enumeration is
// the common index set shared by every policy, reward table and distribution:
// response index i always refers to the same token sequence.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "darlab/common.hpp"

namespace darlab {

enum class SpaceMode {
  kFixedLength,  // every response has exactly max_len tokens
  kEndToken,     // responses of length 1..max_len; shorter ones end with EOS
};

std::string to_string(SpaceMode mode);
SpaceMode space_mode_from_string(const std::string& s);

class ResponseSpace {
 public:
  int vocab_size() const { return vocab_size_; }
  int max_len() const { return max_len_; }
  SpaceMode mode() const { return mode_; }
  std::size_t size() const { return responses_.size(); }

  const std::vector<std::int32_t>& response(std::size_t index) const;
  const std::vector<std::vector<std::int32_t>>& responses() const {
    return responses_;
  }

  // True for end-token mode responses that hit max_len without emitting EOS.
  bool is_truncated(std::size_t index) const;

  // Half-open index range of responses having `prefix` as a (possibly equal)
  // prefix. Responses are sorted lexicographically, so the range is
  // contiguous.
  std::pair<std::size_t, std::size_t> descendant_range(
      std::span<const std::int32_t> prefix) const;

  // Exact index of a full response; throws IndexError when absent.
  std::size_t index_of(std::span<const std::int32_t> tokens) const;

  // Autoregressive contexts: all prefixes of length 0..max_len-1, in the same
  // lexicographic order as the responses. Context 0 is the empty prefix.
  std::size_t context_count() const { return contexts_.size(); }
  const std::vector<std::int32_t>& context(std::size_t id) const;
  std::size_t context_of(std::span<const std::int32_t> prefix) const;

  // Logit columns per context in autoregressive mode: vocab_size tokens plus
  // one EOS column in end-token mode.
  int tokens_per_context() const {
    return vocab_size_ + (mode_ == SpaceMode::kEndToken ? 1 : 0);
  }
  int end_token() const { return vocab_size_; }

  friend ResponseSpace enumerate_responses(int, int, SpaceMode, std::size_t);

 private:
  int vocab_size_ = 0;
  int max_len_ = 0;
  SpaceMode mode_ = SpaceMode::kFixedLength;
  std::vector<std::vector<std::int32_t>> responses_;
  std::vector<std::vector<std::int32_t>> contexts_;
};

// Builds the full response space, lexicographic by token id (a prefix sorts
// before its extensions). Throws EnumerationError naming the cap when the
// space would exceed it.
ResponseSpace enumerate_responses(int vocab_size, int max_len,
                                  SpaceMode mode = SpaceMode::kFixedLength,
                                  std::size_t cap = kDefaultEnumerationCap);

using SpacePtr = std::shared_ptr<const ResponseSpace>;

inline SpacePtr make_space(int vocab_size, int max_len,
                           SpaceMode mode = SpaceMode::kFixedLength,
                           std::size_t cap = kDefaultEnumerationCap) {
  return std::make_shared<const ResponseSpace>(
      enumerate_responses(vocab_size, max_len, mode, cap));
}

}  // namespace darlab
