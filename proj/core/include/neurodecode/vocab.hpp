#pragma once

#include <string>
#include <vector>

namespace neurodecode {

// Character vocabulary for CTC decoding: raw 7-bit code c maps to token
// c + 1, with token 0 reserved as the blank. 129 tokens total.
class CharVocab {
 public:
  static constexpr int kSize = 129;
  static constexpr int kBlank = 0;

  int size() const { return kSize; }
  int blank() const { return kBlank; }

  // Length-preserving; throws ConfigError naming the first offending
  // position if a code point exceeds 127.
  std::vector<int> encode(const std::string& text) const;

  // Inverse of encode; tokens must be in [1, 128] (blank already removed).
  std::string decode(const std::vector<int>& tokens) const;
};

}  // namespace neurodecode
