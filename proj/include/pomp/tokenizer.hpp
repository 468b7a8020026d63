#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pomp {

namespace detail {

inline void append_utf8(std::string& out, char32_t cp) {
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

// Decodes UTF-8; invalid bytes become U+FFFD.
inline std::vector<char32_t> decode_utf8(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    int len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    if (i + static_cast<std::size_t>(len) > s.size()) {
      out.push_back(0xFFFD);
      break;
    }
    bool ok = true;
    for (int k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
      if ((b & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(len);
  }
  return out;
}

inline char32_t to_lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 0x20;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 0x20;   // Latin-1
  if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 0x20;  // Greek
  if (c >= 0x410 && c <= 0x42F) return c + 0x20;                // Cyrillic
  if (c >= 0x400 && c <= 0x40F) return c + 0x50;
  if (c >= 0xFF21 && c <= 0xFF3A) return c + 0x20;  // fullwidth Latin
  return c;
}

inline bool is_space(char32_t c) {
  return c == U' ' || (c >= 0x09 && c <= 0x0D) || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
         c == 0x205F || c == 0x3000 || c == 0xFEFF;
}

inline bool is_punct(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
           (c >= 0x7B && c <= 0x7E);
  }
  return (c >= 0xA1 && c <= 0xBF && c != 0xAA && c != 0xB5 && c != 0xBA) || c == 0xD7 ||
         c == 0xF7 || (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) ||
         (c >= 0x3001 && c <= 0x3003) || (c >= 0x3008 && c <= 0x3011) ||
         (c >= 0x3014 && c <= 0x301F) || (c >= 0xFF01 && c <= 0xFF0F) ||
         (c >= 0xFF1A && c <= 0xFF20) || (c >= 0xFF3B && c <= 0xFF40) ||
         (c >= 0xFF5B && c <= 0xFF65) || c == 0xFFFD;
}

// Ideographs and kana are emitted one character per token.
inline bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x20000 && c <= 0x2FA1F) ||
         (c >= 0x3040 && c <= 0x30FF);
}

}  // namespace detail

// Lowercases and splits on whitespace and punctuation. Punctuation is
// dropped; each CJK character becomes its own token.
inline std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  };
  for (char32_t c : detail::decode_utf8(text)) {
    if (detail::is_space(c) || detail::is_punct(c)) {
      flush();
    } else if (detail::is_cjk(c)) {
      flush();
      std::string single;
      detail::append_utf8(single, c);
      tokens.push_back(std::move(single));
    } else {
      detail::append_utf8(current, detail::to_lower(c));
    }
  }
  flush();
  return tokens;
}

inline std::size_t count_tokens(std::string_view text) { return split_tokens(text).size(); }

using TokenId = std::int32_t;

// Token-string to id map. Ids 0 and 1 are reserved for padding and unknown.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnknown = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnknownToken = "<unk>";

  Vocabulary() {
    ids_.emplace(kPadToken, kPad);
    ids_.emplace(kUnknownToken, kUnknown);
    tokens_ = {kPadToken, kUnknownToken};
  }

  // Adds tokens in first-appearance order. Only valid before freezing.
  void add(const std::string& token) {
    if (frozen_) throw std::logic_error("vocabulary is frozen");
    if (ids_.count(token) != 0) return;
    ids_.emplace(token, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(token);
  }

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  TokenId id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnknown : it->second;
  }

  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  std::size_t size() const { return tokens_.size(); }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = static_cast<TokenId>(i);
    return j;
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::runtime_error("vocabulary: expected a JSON object");
    std::vector<std::string> by_id(j.size());
    for (const auto& [tok, idv] : j.items()) {
      if (!idv.is_number_integer()) throw std::runtime_error("vocabulary: non-integer id for '" + tok + "'");
      const auto id = idv.get<long long>();
      if (id < 0 || static_cast<std::size_t>(id) >= by_id.size() || !by_id[static_cast<std::size_t>(id)].empty())
        throw std::runtime_error("vocabulary: ids must be a dense permutation of 0..n-1");
      by_id[static_cast<std::size_t>(id)] = tok;
    }
    if (by_id.size() < 2 || by_id[kPad] != kPadToken || by_id[kUnknown] != kUnknownToken)
      throw std::runtime_error("vocabulary: ids 0 and 1 must be <pad> and <unk>");
    Vocabulary v;
    for (std::size_t i = 2; i < by_id.size(); ++i) v.add(by_id[i]);
    v.freeze();
    return v;
  }

 private:
  std::map<std::string, TokenId> ids_;
  std::vector<std::string> tokens_;
  bool frozen_ = false;
};

}  // namespace pomp
