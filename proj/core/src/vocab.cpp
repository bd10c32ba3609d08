#include "neurodecode/vocab.hpp"

#include "neurodecode/error.hpp"

namespace neurodecode {

std::vector<int> CharVocab::encode(const std::string& text) const {
  std::vector<int> tokens;
  tokens.reserve(text.size());
  for (size_t i = 0; i < text.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (c > 127) {
      throw ConfigError("encode: non-ASCII code point " + std::to_string(int(c)) +
                        " at position " + std::to_string(i));
    }
    tokens.push_back(int(c) + 1);
  }
  return tokens;
}

std::string CharVocab::decode(const std::vector<int>& tokens) const {
  std::string text;
  text.reserve(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) {
    const int t = tokens[i];
    if (t < 1 || t > 128) {
      throw ConfigError("decode: token " + std::to_string(t) + " at position " +
                        std::to_string(i) + " outside [1, 128]");
    }
    text.push_back(static_cast<char>(t - 1));
  }
  return text;
}

}  // namespace neurodecode
