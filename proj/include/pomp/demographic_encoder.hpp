#pragma once

#include "pomp/dataset.hpp"
#include "pomp/linalg.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace pomp {

// Feature token rows: age, height, weight, duration, gender, pregnancy.
inline constexpr std::size_t kFeatureTokenCount = kContinuousCount + 2;
inline constexpr std::size_t kGenderRow = kContinuousCount;
inline constexpr std::size_t kPregnancyRow = kContinuousCount + 1;

// Embedding tables and per-feature affine lifts that build the feature tokens.
struct FeatureParams {
  Matrix gender_table;     // 2 x d_model
  Matrix pregnancy_table;  // 3 x d_model
  Matrix continuous_w;     // 4 x d_model
  Matrix continuous_b;     // 4 x d_model

  static FeatureParams zeros(std::size_t d_model) {
    const auto d = static_cast<Eigen::Index>(d_model);
    return {Matrix::Zero(kGenderCount, d), Matrix::Zero(kPregnancyCount, d), Matrix::Zero(kContinuousCount, d),
            Matrix::Zero(kContinuousCount, d)};
  }
};

// Shared input projections Linear_{Q,K,V}, per-head projections stored as
// column blocks of head_q/head_k/head_v, and the output projection.
struct AttentionParams {
  std::size_t heads = 1;
  Matrix wq, wk, wv;              // d_model x d_model
  Matrix bq, bk, bv;              // 1 x d_model
  Matrix head_q, head_k, head_v;  // d_model x (heads * d_head)
  Matrix wo;                      // (heads * d_head) x d_model
  Matrix bo;                      // 1 x d_model

  std::size_t d_model() const { return static_cast<std::size_t>(wq.rows()); }
  std::size_t d_head() const { return static_cast<std::size_t>(head_q.cols()) / heads; }

  static AttentionParams zeros(std::size_t d_model, std::size_t heads) {
    if (heads == 0 || d_model % heads != 0) throw std::invalid_argument("d_model must be a multiple of heads");
    const auto d = static_cast<Eigen::Index>(d_model);
    AttentionParams p;
    p.heads = heads;
    p.wq = p.wk = p.wv = Matrix::Zero(d, d);
    p.bq = p.bk = p.bv = p.bo = Matrix::Zero(1, d);
    p.head_q = p.head_k = p.head_v = Matrix::Zero(d, d);
    p.wo = Matrix::Zero(d, d);
    return p;
  }
};

inline std::array<double, kContinuousCount> normalize_continuous(const PatientRecord& r,
                                                                 const ContinuousNormalizer& norm) {
  return norm.apply(r.continuous);
}

// OneHot(value) * table, i.e. the indexed row.
inline Vector one_hot_embed(std::size_t index, const Matrix& table) {
  if (index >= static_cast<std::size_t>(table.rows()))
    throw std::out_of_range("one_hot_embed: enumeration index " + std::to_string(index) + " outside table of " +
                            std::to_string(table.rows()) + " rows");
  Vector one_hot = Vector::Zero(table.rows());
  one_hot[static_cast<Eigen::Index>(index)] = 1.0;
  return table.transpose() * one_hot;
}

inline Vector one_hot_embed(Gender g, const Matrix& table) { return one_hot_embed(static_cast<std::size_t>(g), table); }

inline Vector one_hot_embed(Pregnancy p, const Matrix& table) {
  return one_hot_embed(static_cast<std::size_t>(p), table);
}

// Row f < 4 is c_f * w_f + b_f; rows 4 and 5 are the discrete embeddings.
inline Matrix build_feature_tokens(const std::array<double, kContinuousCount>& continuous, const Vector& gender,
                                   const Vector& pregnancy, const FeatureParams& p) {
  Matrix tokens(static_cast<Eigen::Index>(kFeatureTokenCount), p.continuous_w.cols());
  for (std::size_t f = 0; f < kContinuousCount; ++f) {
    const auto row = static_cast<Eigen::Index>(f);
    tokens.row(row) = continuous[f] * p.continuous_w.row(row) + p.continuous_b.row(row);
  }
  tokens.row(kGenderRow) = gender.transpose();
  tokens.row(kPregnancyRow) = pregnancy.transpose();
  return tokens;
}

// Intermediates kept for the backward pass.
struct AttentionCache {
  Matrix input;           // n x d
  Matrix q, k, v;         // after Linear_{Q,K,V}
  Matrix qh, kh, vh;      // after per-head projections, n x (h * dh)
  std::vector<Matrix> weights;  // per head, n x n row-stochastic
  Matrix concat;          // n x (h * dh)
  Matrix output;          // n x d, before pooling
};

// Scaled dot-product multi-head attention over the token rows, then a mean
// over positions.
inline Vector multi_head_attention(const Matrix& tokens, const AttentionParams& p, AttentionCache* cache = nullptr) {
  AttentionCache local;
  AttentionCache& c = cache != nullptr ? *cache : local;
  const auto n = tokens.rows();
  const auto dh = static_cast<Eigen::Index>(p.d_head());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  c.input = tokens;
  c.q = (tokens * p.wq).rowwise() + p.bq.row(0);
  c.k = (tokens * p.wk).rowwise() + p.bk.row(0);
  c.v = (tokens * p.wv).rowwise() + p.bv.row(0);
  c.qh = c.q * p.head_q;
  c.kh = c.k * p.head_k;
  c.vh = c.v * p.head_v;
  c.concat.resize(n, static_cast<Eigen::Index>(p.heads) * dh);
  c.weights.assign(p.heads, Matrix());
  for (std::size_t h = 0; h < p.heads; ++h) {
    const auto off = static_cast<Eigen::Index>(h) * dh;
    Matrix scores = c.qh.middleCols(off, dh) * c.kh.middleCols(off, dh).transpose() * scale;
    for (Eigen::Index i = 0; i < n; ++i) {
      scores.row(i) = softmax(scores.row(i).transpose()).transpose();
    }
    c.concat.middleCols(off, dh) = scores * c.vh.middleCols(off, dh);
    c.weights[h] = std::move(scores);
  }
  c.output = (c.concat * p.wo).rowwise() + p.bo.row(0);
  return c.output.colwise().mean().transpose();
}

// Accumulates parameter gradients into grad and returns d(loss)/d(tokens).
inline Matrix multi_head_attention_backward(const AttentionCache& c, const AttentionParams& p, const Vector& upstream,
                                            AttentionParams& grad) {
  const auto n = c.input.rows();
  const auto dh = static_cast<Eigen::Index>(p.d_head());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix d_out(n, upstream.size());
  d_out.rowwise() = upstream.transpose() / static_cast<double>(n);
  grad.wo.noalias() += c.concat.transpose() * d_out;
  grad.bo.row(0) += d_out.colwise().sum();
  const Matrix d_concat = d_out * p.wo.transpose();

  Matrix d_qh(n, c.qh.cols()), d_kh(n, c.kh.cols()), d_vh(n, c.vh.cols());
  for (std::size_t h = 0; h < p.heads; ++h) {
    const auto off = static_cast<Eigen::Index>(h) * dh;
    const Matrix& a = c.weights[h];
    const auto d_head_out = d_concat.middleCols(off, dh);
    const Matrix d_a = d_head_out * c.vh.middleCols(off, dh).transpose();
    d_vh.middleCols(off, dh) = a.transpose() * d_head_out;
    Matrix d_scores(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dot = a.row(i).dot(d_a.row(i));
      d_scores.row(i) = a.row(i).array() * (d_a.row(i).array() - dot);
    }
    d_scores *= scale;
    d_qh.middleCols(off, dh) = d_scores * c.kh.middleCols(off, dh);
    d_kh.middleCols(off, dh) = d_scores.transpose() * c.qh.middleCols(off, dh);
  }

  grad.head_q.noalias() += c.q.transpose() * d_qh;
  grad.head_k.noalias() += c.k.transpose() * d_kh;
  grad.head_v.noalias() += c.v.transpose() * d_vh;
  const Matrix d_q = d_qh * p.head_q.transpose();
  const Matrix d_k = d_kh * p.head_k.transpose();
  const Matrix d_v = d_vh * p.head_v.transpose();
  grad.wq.noalias() += c.input.transpose() * d_q;
  grad.wk.noalias() += c.input.transpose() * d_k;
  grad.wv.noalias() += c.input.transpose() * d_v;
  grad.bq.row(0) += d_q.colwise().sum();
  grad.bk.row(0) += d_k.colwise().sum();
  grad.bv.row(0) += d_v.colwise().sum();
  return d_q * p.wq.transpose() + d_k * p.wk.transpose() + d_v * p.wv.transpose();
}

// Token construction followed by attention: Emb_data for one record.
inline Vector encode_demographics(const std::array<double, kContinuousCount>& continuous, Gender gender,
                                  Pregnancy pregnancy, const FeatureParams& features, const AttentionParams& attention,
                                  AttentionCache* cache = nullptr) {
  const Matrix tokens = build_feature_tokens(continuous, one_hot_embed(gender, features.gender_table),
                                             one_hot_embed(pregnancy, features.pregnancy_table), features);
  return multi_head_attention(tokens, attention, cache);
}

inline Vector encode_demographics(const PatientRecord& r, const ContinuousNormalizer& norm,
                                  const FeatureParams& features, const AttentionParams& attention) {
  return encode_demographics(normalize_continuous(r, norm), r.gender, r.pregnancy, features, attention);
}

}  // namespace pomp
