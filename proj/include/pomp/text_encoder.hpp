#pragma once

#include "pomp/dataset.hpp"
#include "pomp/linalg.hpp"
#include "pomp/tokenizer.hpp"

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pomp {

enum class TextBackend { trainable, precomputed };

inline std::string_view to_string(TextBackend b) {
  return b == TextBackend::trainable ? "trainable" : "precomputed";
}

// Order in which field prompts are concatenated into one sentence.
inline constexpr std::array<TextField, kTextFieldCount> kPromptOrder = {
    TextField::chronic, TextField::therapy, TextField::usage,
    TextField::surgery, TextField::symptom, TextField::allergy};

inline constexpr std::string_view kPromptSeparator = ". ";

inline bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n\v\f") == std::string_view::npos;
}

// "<field> is <text>", or "" when the text is blank.
inline std::string build_prompt(std::string_view field_type, std::string_view text) {
  if (!parse_text_field(field_type)) throw std::invalid_argument("unknown text field '" + std::string(field_type) + "'");
  if (is_blank(text)) return {};
  std::string out(field_type);
  out += " is ";
  out += text;
  return out;
}

inline std::string compose_sentence(const PatientRecord& r) {
  std::string s;
  for (auto field : kPromptOrder) {
    auto prompt = build_prompt(kTextFieldNames[static_cast<std::size_t>(field)], r.text(field));
    if (prompt.empty()) continue;
    if (!s.empty()) s += kPromptSeparator;
    s += prompt;
  }
  return s;
}

struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> mask;

  std::size_t real_tokens() const {
    std::size_t n = 0;
    for (auto m : mask) n += m;
    return n;
  }
};

inline TokenSequence tokenize(std::string_view sentence, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 1) throw std::invalid_argument("tokenize: max_len must be >= 1");
  TokenSequence seq;
  seq.ids.assign(max_len, Vocabulary::kPad);
  seq.mask.assign(max_len, 0);
  const auto tokens = split_tokens(sentence);
  const auto n = std::min(tokens.size(), max_len);
  for (std::size_t i = 0; i < n; ++i) {
    seq.ids[i] = vocab.id(tokens[i]);
    seq.mask[i] = 1;
  }
  return seq;
}

// Frozen vocabulary over the composed sentences of the training split.
inline Vocabulary build_vocabulary(const Dataset& train) {
  Vocabulary v;
  for (const auto& r : train) {
    for (const auto& t : split_tokens(compose_sentence(r))) v.add(t);
  }
  v.freeze();
  return v;
}

inline Matrix embed_tokens(const TokenSequence& seq, const Matrix& table) {
  Matrix out(static_cast<Eigen::Index>(seq.ids.size()), table.cols());
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const auto id = seq.ids[i];
    if (id < 0 || id >= table.rows())
      throw std::out_of_range("embed_tokens: token id " + std::to_string(id) + " outside table of " +
                              std::to_string(table.rows()) + " rows");
    out.row(static_cast<Eigen::Index>(i)) = table.row(id);
  }
  return out;
}

// sum_i mask_i * emb_i / max(sum_i mask_i, epsilon)
inline Vector masked_mean_pool(const Matrix& emb, const std::vector<std::uint8_t>& mask,
                               double epsilon = kDefaultEpsilon) {
  if (static_cast<std::size_t>(emb.rows()) != mask.size())
    throw std::invalid_argument("masked_mean_pool: mask length does not match embedding rows");
  Vector sum = Vector::Zero(emb.cols());
  double count = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == 0) continue;
    sum += emb.row(static_cast<Eigen::Index>(i)).transpose() * static_cast<double>(mask[i]);
    count += mask[i];
  }
  return sum / std::max(count, epsilon);
}

inline Vector encode_precomputed(const PatientRecord& r, double epsilon = kDefaultEpsilon) {
  if (!r.text_embedding) throw DataError("precomputed text backend requires a text_embedding on every record");
  const auto& e = *r.text_embedding;
  return l2_normalize(Eigen::Map<const Vector>(e.data(), static_cast<Eigen::Index>(e.size())), epsilon);
}

// Full text path: prompts, tokens, lookup, masked mean, L2 normalization.
inline Vector encode_text(const PatientRecord& r, const Vocabulary& vocab, const Matrix& table, std::size_t max_len,
                          double epsilon = kDefaultEpsilon, TextBackend backend = TextBackend::trainable) {
  if (backend == TextBackend::precomputed) return encode_precomputed(r, epsilon);
  const auto seq = tokenize(compose_sentence(r), vocab, max_len);
  return l2_normalize(masked_mean_pool(embed_tokens(seq, table), seq.mask, epsilon), epsilon);
}

}  // namespace pomp
