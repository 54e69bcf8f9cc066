#pragma once

#include <string>
#include <vector>

#include "hft/errors.hpp"
#include "hft/unicode_tables.hpp"

namespace hft {

enum class TokenizerMode { chars, whitespace };

inline std::string to_string(TokenizerMode mode) {
  return mode == TokenizerMode::chars ? "char" : "whitespace";
}

inline TokenizerMode tokenizer_mode_from_string(const std::string& s) {
  if (s == "char") return TokenizerMode::chars;
  if (s == "whitespace") return TokenizerMode::whitespace;
  throw FormatError("unknown tokenizer mode \"" + s + "\" (expected char or whitespace)");
}

namespace detail {

// Minimal UTF-8 decoding. Malformed bytes decode to U+FFFD, which is a
// symbol and therefore vanishes during cleaning.
inline constexpr char32_t kReplacement = 0xFFFD;

inline char32_t decode_utf8(const std::string& s, std::size_t& i) {
  const unsigned char b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int extra;
  char32_t cp;
  if ((b0 & 0xE0) == 0xC0) {
    extra = 1;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    extra = 2;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    extra = 3;
    cp = b0 & 0x07;
  } else {
    ++i;
    return kReplacement;
  }
  if (i + static_cast<std::size_t>(extra) >= s.size()) {  // truncated sequence
    ++i;
    return kReplacement;
  }
  for (int k = 1; k <= extra; ++k) {
    const unsigned char bk = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
    if ((bk & 0xC0) != 0x80) {
      ++i;
      return kReplacement;
    }
    cp = (cp << 6) | (bk & 0x3F);
  }
  i += static_cast<std::size_t>(extra) + 1;
  if (cp > 0x10FFFF) return kReplacement;
  return cp;
}

inline void encode_utf8(char32_t cp, std::string& out) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::vector<char32_t> decode_all(const std::string& s) {
  std::vector<char32_t> cps;
  cps.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) cps.push_back(decode_utf8(s, i));
  return cps;
}

}  // namespace detail

// Removes Unicode punctuation and symbol characters, collapses whitespace
// runs to single ASCII spaces and trims the ends. Letters, digits and CJK
// ideographs pass through unchanged.
inline std::string clean_text(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char32_t cp : detail::decode_all(s)) {
    const bool gap = unicode::is_whitespace(cp) || unicode::is_punctuation_or_symbol(cp) ||
                     cp < 0x20 || cp == 0x7F;
    if (gap) {
      if (!out.empty()) pending_space = true;
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    detail::encode_utf8(cp, out);
  }
  return out;
}

// Tokenizes cleaned text. Char mode yields one token per non-space Unicode
// scalar (the stand-in for Chinese word segmentation); whitespace mode splits
// on the single spaces clean_text leaves behind.
inline std::vector<std::string> tokenize(const std::string& cleaned, TokenizerMode mode) {
  std::vector<std::string> tokens;
  if (mode == TokenizerMode::chars) {
    for (char32_t cp : detail::decode_all(cleaned)) {
      if (cp == U' ') continue;
      std::string tok;
      detail::encode_utf8(cp, tok);
      tokens.push_back(std::move(tok));
    }
    return tokens;
  }
  std::size_t start = 0;
  while (start < cleaned.size()) {
    const std::size_t space = cleaned.find(' ', start);
    if (space == std::string::npos) {
      tokens.push_back(cleaned.substr(start));
      break;
    }
    if (space > start) tokens.push_back(cleaned.substr(start, space - start));
    start = space + 1;
  }
  return tokens;
}

}  // namespace hft
