#pragma once

#include "pomp/dataset.hpp"
#include "pomp/demographic_encoder.hpp"
#include "pomp/linalg.hpp"
#include "pomp/model.hpp"

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

namespace pomp {

// [data ; text]
inline Vector concat_embeddings(const Vector& data, const Vector& text) {
  Vector z(data.size() + text.size());
  z << data, text;
  return z;
}

inline Vector fuse_linear(const Vector& concat, const Matrix& w, const Matrix& b) {
  return w.transpose() * concat + b.row(0).transpose();
}

// Normalize(Linear(Concat(data, text)))
inline Vector fuse_embeddings(const Vector& data, const Vector& text, const Matrix& w, const Matrix& b,
                              double epsilon = kDefaultEpsilon) {
  return l2_normalize(fuse_linear(concat_embeddings(data, text), w, b), epsilon);
}

inline Vector head_logits(const Vector& fused, const Matrix& w, const Matrix& b) {
  return w.transpose() * fused + b.row(0).transpose();
}

inline Vector predict_category(const Vector& fused, const Matrix& w, const Matrix& b) {
  return softmax(head_logits(fused, w, b));
}

// Distribution over the given category's disease subset.
inline Vector predict_disease(const Vector& concat, std::size_t category, const ModelParams& params,
                              double epsilon = kDefaultEpsilon) {
  if (category >= params.heads.size())
    throw std::out_of_range("predict_disease: unknown category index " + std::to_string(category));
  const auto& h = params.heads[category];
  return softmax(head_logits(l2_normalize(fuse_linear(concat, h.fuse_w, h.fuse_b), epsilon), h.disease_w, h.disease_b));
}

// Forward intermediates for one record, consumed by the backward pass.
struct ForwardCache {
  Vector pooled;  // text before normalization
  Vector text;
  AttentionCache attention;
  Vector data;
  Vector concat;
  Vector fuse1;  // tier-1 pre-normalization
  Vector fused1;
  Vector category_probs;
  std::size_t head = 0;
  Vector fuse2;
  Vector fused2;
  Vector disease_probs;
};

inline Vector encode_text_input(const ModelParams& params, const EncodedRecord& e, const TrainingConfig& config,
                                Vector* pooled_out = nullptr) {
  if (config.backend == TextBackend::precomputed) {
    if (pooled_out != nullptr) *pooled_out = e.precomputed;
    return e.precomputed;
  }
  Vector sum = Vector::Zero(params.token_table.cols());
  for (auto id : e.tokens) {
    if (id < 0 || id >= params.token_table.rows()) throw std::out_of_range("token id outside embedding table");
    sum += params.token_table.row(id).transpose();
  }
  Vector pooled = sum / std::max(static_cast<double>(e.tokens.size()), config.epsilon);
  Vector text = l2_normalize(pooled, config.epsilon);
  if (pooled_out != nullptr) *pooled_out = std::move(pooled);
  return text;
}

// Text and demographic encoders plus concatenation. With text_only the
// demographic embedding is the zero vector.
inline Vector encode_inputs(const ModelParams& params, const EncodedRecord& e, const TrainingConfig& config,
                            bool text_only, ForwardCache* cache = nullptr) {
  Vector pooled;
  Vector text = encode_text_input(params, e, config, &pooled);
  Vector data;
  if (text_only) {
    data = Vector::Zero(params.attention.bo.cols());
  } else {
    data = encode_demographics(e.continuous, e.gender, e.pregnancy, params.features, params.attention,
                               cache != nullptr ? &cache->attention : nullptr);
  }
  Vector concat = concat_embeddings(data, text);
  if (cache != nullptr) {
    cache->pooled = std::move(pooled);
    cache->text = std::move(text);
    cache->data = std::move(data);
    cache->concat = concat;
  }
  return concat;
}

// Tier 1 and the tier-2 head chosen by `head` (or by argmax when absent).
inline void forward(const ModelParams& params, const EncodedRecord& e, const TrainingConfig& config, bool text_only,
                    std::optional<std::size_t> head, ForwardCache& c) {
  encode_inputs(params, e, config, text_only, &c);
  c.fuse1 = fuse_linear(c.concat, params.fuse_w, params.fuse_b);
  c.fused1 = l2_normalize(c.fuse1, config.epsilon);
  c.category_probs = predict_category(c.fused1, params.category_w, params.category_b);
  c.head = head ? *head : static_cast<std::size_t>(argmax(c.category_probs));
  const auto& h = params.heads.at(c.head);
  c.fuse2 = fuse_linear(c.concat, h.fuse_w, h.fuse_b);
  c.fused2 = l2_normalize(c.fuse2, config.epsilon);
  c.disease_probs = softmax(head_logits(c.fused2, h.disease_w, h.disease_b));
}

struct Prediction {
  Vector category_probs;
  std::size_t selected_category = 0;
  Vector disease_probs;     // over the selected category's subset
  Vector composite_scores;  // over global diseases

  bool operator==(const Prediction& o) const {
    return selected_category == o.selected_category && category_probs == o.category_probs &&
           disease_probs == o.disease_probs && composite_scores == o.composite_scores;
  }
};

inline Prediction predict_encoded(const Model& model, const EncodedRecord& e, bool text_only) {
  const auto& p = model.params;
  const auto& cfg = model.config;
  Prediction out;
  const Vector concat = encode_inputs(p, e, cfg, text_only);
  out.category_probs =
      predict_category(fuse_embeddings(concat.head(p.attention.bo.cols()), concat.tail(p.token_table.cols()),
                                       p.fuse_w, p.fuse_b, cfg.epsilon),
                       p.category_w, p.category_b);
  out.selected_category = static_cast<std::size_t>(argmax(out.category_probs));
  out.composite_scores = Vector::Zero(static_cast<Eigen::Index>(model.taxonomy.disease_count()));
  for (std::size_t c = 0; c < model.taxonomy.category_count(); ++c) {
    const Vector q = predict_disease(concat, c, p, cfg.epsilon);
    const auto& members = model.taxonomy.members(c);
    for (std::size_t k = 0; k < members.size(); ++k) {
      out.composite_scores[static_cast<Eigen::Index>(members[k])] +=
          out.category_probs[static_cast<Eigen::Index>(c)] * q[static_cast<Eigen::Index>(k)];
    }
    if (c == out.selected_category) out.disease_probs = q;
  }
  return out;
}

inline Prediction predict_full(const Model& model, const PatientRecord& r, std::optional<bool> text_only = std::nullopt) {
  return predict_encoded(model, encode_record(model, r, false), text_only.value_or(model.config.text_only));
}

}  // namespace pomp
