#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mialab {

/// A text split into word tokens on unicode whitespace.
///
/// Tokens are exactly the nonempty pieces of the source text between
/// whitespace runs: case-sensitive, punctuation kept. Joining the tokens
/// with single spaces and re-tokenizing reproduces the same tokens.
struct TokenSeq {
  std::vector<std::string> tokens;
  std::string source_text;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
};

namespace detail {

inline bool is_unicode_whitespace(char32_t cp) {
  switch (cp) {
    case 0x0009: case 0x000A: case 0x000B: case 0x000C: case 0x000D:
    case 0x0020: case 0x0085: case 0x00A0: case 0x1680:
    case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

/// Decode one UTF-8 code point at s[i]; advances i past it. An invalid
/// byte is consumed as-is (treated as a one-byte non-whitespace char).
inline char32_t decode_utf8(std::string_view s, std::size_t& i) {
  const unsigned char b0 = static_cast<unsigned char>(s[i]);
  std::size_t len = 1;
  char32_t cp = b0;
  if (b0 >= 0xF0) { len = 4; cp = b0 & 0x07u; }
  else if (b0 >= 0xE0) { len = 3; cp = b0 & 0x0Fu; }
  else if (b0 >= 0xC0) { len = 2; cp = b0 & 0x1Fu; }
  if (len == 1 || i + len > s.size()) { ++i; return b0 < 0x80 ? cp : 0xFFFD; }
  for (std::size_t k = 1; k < len; ++k) {
    const unsigned char bk = static_cast<unsigned char>(s[i + k]);
    if ((bk & 0xC0u) != 0x80u) { ++i; return 0xFFFD; }
    cp = (cp << 6) | (bk & 0x3Fu);
  }
  i += len;
  return cp;
}

}  // namespace detail

/// Word-level tokenization: split on unicode whitespace, drop empty pieces.
inline TokenSeq tokenize(std::string_view text) {
  TokenSeq seq;
  seq.source_text.assign(text);
  std::size_t i = 0;
  std::size_t word_begin = 0;
  bool in_word = false;
  while (i < text.size()) {
    const std::size_t at = i;
    const char32_t cp = detail::decode_utf8(text, i);
    if (detail::is_unicode_whitespace(cp)) {
      if (in_word) {
        seq.tokens.emplace_back(text.substr(word_begin, at - word_begin));
        in_word = false;
      }
    } else if (!in_word) {
      word_begin = at;
      in_word = true;
    }
  }
  if (in_word) seq.tokens.emplace_back(text.substr(word_begin));
  return seq;
}

/// TokenSeq from already-split tokens (source text is the space-join).
inline TokenSeq from_tokens(std::vector<std::string> tokens) {
  TokenSeq seq;
  std::string text;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) text += ' ';
    text += tokens[i];
  }
  seq.tokens = std::move(tokens);
  seq.source_text = std::move(text);
  return seq;
}

}  // namespace mialab
