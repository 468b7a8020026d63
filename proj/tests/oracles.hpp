#pragma once

// Reference implementations used only by tests. They are written with plain
// loops over std::vector and share no code path with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline Mat add_row(Mat m, const std::vector<double>& bias) {
  for (auto& row : m)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
  return m;
}

// Multi-head scaled dot-product attention evaluated entry by entry, followed
// by a mean over positions.
struct AttentionWeights {
  Mat wq, wk, wv;
  std::vector<double> bq, bk, bv;
  Mat head_q, head_k, head_v, wo;
  std::vector<double> bo;
  std::size_t heads = 1;
};

inline std::vector<double> attention(const Mat& x, const AttentionWeights& w,
                                     std::vector<Mat>* weights_out = nullptr) {
  const std::size_t n = x.size();
  const Mat q = matmul(add_row(matmul(x, w.wq), w.bq), w.head_q);
  const Mat k = matmul(add_row(matmul(x, w.wk), w.bk), w.head_k);
  const Mat v = matmul(add_row(matmul(x, w.wv), w.bv), w.head_v);
  const std::size_t total = q[0].size();
  const std::size_t dh = total / w.heads;
  Mat concat(n, std::vector<double>(total, 0.0));
  if (weights_out) weights_out->clear();
  for (std::size_t h = 0; h < w.heads; ++h) {
    Mat a(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n);
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[i][h * dh + c] * k[j][h * dh + c];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
      }
      double denom = 0.0;
      for (std::size_t j = 0; j < n; ++j) denom += std::exp(s[j]);
      for (std::size_t j = 0; j < n; ++j) a[i][j] = std::exp(s[j]) / denom;
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += a[i][j] * v[j][h * dh + c];
        concat[i][h * dh + c] = acc;
      }
    }
    if (weights_out) weights_out->push_back(a);
  }
  const Mat out = add_row(matmul(concat, w.wo), w.bo);
  std::vector<double> pooled(out[0].size(), 0.0);
  for (const auto& row : out)
    for (std::size_t j = 0; j < row.size(); ++j) pooled[j] += row[j] / static_cast<double>(n);
  return pooled;
}

// Rank of `label` counting strictly higher scores and equal scores at lower
// indices; a top-k hit iff rank < k.
inline bool top_k_hit(const std::vector<double>& scores, std::size_t label, std::size_t k) {
  std::size_t rank = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > scores[label] || (scores[j] == scores[label] && j < label)) ++rank;
  }
  return rank < k;
}

// Average precision from the precision/recall point at every distinct score
// threshold (predict positive iff score >= t), thresholds descending.
inline double average_precision(const std::vector<double>& scores, const std::vector<bool>& positive) {
  std::set<double, std::greater<double>> thresholds(scores.begin(), scores.end());
  double total_pos = 0.0;
  for (bool p : positive) total_pos += p ? 1.0 : 0.0;
  if (total_pos == 0.0) return 0.0;
  double ap = 0.0;
  double prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0.0, predicted = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) {
        predicted += 1.0;
        tp += positive[i] ? 1.0 : 0.0;
      }
    }
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / predicted);
    prev_recall = recall;
  }
  return ap;
}

}  // namespace oracle
