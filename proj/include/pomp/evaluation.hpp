#pragma once

#include "pomp/classifier.hpp"
#include "pomp/dataset.hpp"
#include "pomp/linalg.hpp"
#include "pomp/model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstddef>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pomp {

enum class EvalMode { full, text_only };

inline std::string_view to_string(EvalMode m) { return m == EvalMode::full ? "full" : "text_only"; }

// Indices sorted by descending score; ties keep the lower index first.
inline std::vector<std::size_t> rank_indices(const Vector& scores) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[static_cast<Eigen::Index>(a)] > scores[static_cast<Eigen::Index>(b)];
  });
  return idx;
}

inline bool in_top_k(const Vector& scores, std::size_t label, std::size_t k) {
  const auto ranked = rank_indices(scores);
  const auto n = std::min(k, ranked.size());
  return std::find(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n), label) !=
         ranked.begin() + static_cast<std::ptrdiff_t>(n);
}

// Gold labels of one record as indices into the model taxonomy.
struct GoldLabels {
  std::size_t category = 0;
  std::size_t disease = 0;  // global index
};

inline double hit_at_k_category(const std::vector<Prediction>& predictions, const std::vector<GoldLabels>& gold,
                                std::size_t k) {
  if (k < 1) throw std::invalid_argument("hit_at_k: k must be >= 1");
  if (predictions.size() != gold.size()) throw std::invalid_argument("hit_at_k: size mismatch");
  if (predictions.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    hits += in_top_k(predictions[i].category_probs, gold[i].category, k) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// A hit requires the routed category to be the gold one and the gold disease
// to be in the top k of that category's distribution.
inline double hit_at_k_disease_joint(const std::vector<Prediction>& predictions, const std::vector<GoldLabels>& gold,
                                     const Taxonomy& taxonomy, std::size_t k) {
  if (k < 1) throw std::invalid_argument("hit_at_k: k must be >= 1");
  if (predictions.size() != gold.size()) throw std::invalid_argument("hit_at_k: size mismatch");
  if (predictions.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    if (p.selected_category != gold[i].category) continue;
    auto local = taxonomy.local_index(gold[i].category, gold[i].disease);
    if (local && in_top_k(p.disease_probs, *local, k)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// Step-wise average precision over a descending-score sweep. Tied scores are
// processed as one group. Returns 0 when there are no positives.
inline double average_precision(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("average_precision: size mismatch");
  const auto total_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  if (total_pos == 0.0) return 0.0;
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  double tp = 0.0;
  double seen = 0.0;
  double prev_recall = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      tp += positive[idx[j]] ? 1.0 : 0.0;
      seen += 1.0;
      ++j;
    }
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

// One-vs-rest AP per label, averaged over labels that have a positive.
// scores[i] holds one score per label for record i.
inline double auc_pr_macro(const std::vector<Vector>& scores, const std::vector<std::size_t>& gold,
                           std::size_t label_count) {
  if (scores.size() != gold.size()) throw std::invalid_argument("auc_pr_macro: size mismatch");
  std::vector<std::size_t> positives(label_count, 0);
  for (auto g : gold) {
    if (g >= label_count) throw std::out_of_range("auc_pr_macro: gold label outside label space");
    ++positives[g];
  }
  double sum = 0.0;
  std::size_t used = 0;
  std::vector<double> column(scores.size());
  std::vector<bool> is_pos(scores.size());
  for (std::size_t label = 0; label < label_count; ++label) {
    if (positives[label] == 0) continue;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      column[i] = scores[i][static_cast<Eigen::Index>(label)];
      is_pos[i] = gold[i] == label;
    }
    sum += average_precision(column, is_pos);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("auc_pr_macro: no label has a positive example");
  return sum / static_cast<double>(used);
}

struct CategoryBreakdown {
  std::string category;
  std::size_t records = 0;
  double category_hit_at_1 = 0.0;
  double disease_hit_at_1 = 0.0;
};

struct MetricsReport {
  std::string mode = "full";
  std::size_t record_count = 0;
  double category_hit_at_1 = 0.0;
  double category_hit_at_3 = 0.0;
  double category_hit_at_10 = 0.0;
  double disease_hit_at_1 = 0.0;
  double disease_hit_at_3 = 0.0;
  double disease_hit_at_10 = 0.0;
  double category_auc_pr = 0.0;
  double disease_auc_pr = 0.0;
  std::vector<CategoryBreakdown> per_category;

  nlohmann::json to_json() const {
    nlohmann::json breakdown = nlohmann::json::array();
    for (const auto& b : per_category) {
      breakdown.push_back({{"category", b.category},
                           {"records", b.records},
                           {"category_hit_at_1", b.category_hit_at_1},
                           {"disease_hit_at_1", b.disease_hit_at_1}});
    }
    return {{"mode", mode},
            {"record_count", record_count},
            {"category_hit_at_1", category_hit_at_1},
            {"category_hit_at_3", category_hit_at_3},
            {"category_hit_at_10", category_hit_at_10},
            {"disease_hit_at_1", disease_hit_at_1},
            {"disease_hit_at_3", disease_hit_at_3},
            {"disease_hit_at_10", disease_hit_at_10},
            {"category_auc_pr", category_auc_pr},
            {"disease_auc_pr", disease_auc_pr},
            {"per_category", breakdown}};
  }

  // Rows Category/Disease, columns Hit@1, Hit@3, Hit@10, AUC-PR.
  std::string to_table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    os << "mode: " << mode << "   records: " << record_count << "\n";
    os << "          Hit@1   Hit@3   Hit@10  AUC-PR\n";
    os << "Category  " << category_hit_at_1 << "   " << category_hit_at_3 << "   " << category_hit_at_10 << "   "
       << category_auc_pr << "\n";
    os << "Disease   " << disease_hit_at_1 << "   " << disease_hit_at_3 << "   " << disease_hit_at_10 << "   "
       << disease_auc_pr << "\n";
    return os.str();
  }
};

inline std::vector<GoldLabels> gold_labels(const Model& model, const Dataset& ds) {
  std::vector<GoldLabels> gold;
  gold.reserve(ds.size());
  for (const auto& r : ds) {
    auto c = model.taxonomy.category_index(r.category);
    auto d = model.taxonomy.disease_index(r.disease);
    if (!c || !d) throw DataError("record labels (" + r.category + ", " + r.disease + ") not in model taxonomy");
    gold.push_back({*c, *d});
  }
  return gold;
}

inline MetricsReport metrics_from_predictions(const Taxonomy& taxonomy, const std::vector<Prediction>& predictions,
                                              const std::vector<GoldLabels>& gold, EvalMode mode) {
  if (predictions.empty()) throw std::invalid_argument("evaluate: empty test set");
  MetricsReport m;
  m.mode = std::string(to_string(mode));
  m.record_count = predictions.size();
  m.category_hit_at_1 = hit_at_k_category(predictions, gold, 1);
  m.category_hit_at_3 = hit_at_k_category(predictions, gold, 3);
  m.category_hit_at_10 = hit_at_k_category(predictions, gold, 10);
  m.disease_hit_at_1 = hit_at_k_disease_joint(predictions, gold, taxonomy, 1);
  m.disease_hit_at_3 = hit_at_k_disease_joint(predictions, gold, taxonomy, 3);
  m.disease_hit_at_10 = hit_at_k_disease_joint(predictions, gold, taxonomy, 10);

  std::vector<Vector> cat_scores, dis_scores;
  std::vector<std::size_t> cat_gold, dis_gold;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    cat_scores.push_back(predictions[i].category_probs);
    dis_scores.push_back(predictions[i].composite_scores);
    cat_gold.push_back(gold[i].category);
    dis_gold.push_back(gold[i].disease);
  }
  m.category_auc_pr = auc_pr_macro(cat_scores, cat_gold, taxonomy.category_count());
  m.disease_auc_pr = auc_pr_macro(dis_scores, dis_gold, taxonomy.disease_count());

  for (std::size_t c = 0; c < taxonomy.category_count(); ++c) {
    std::vector<Prediction> p;
    std::vector<GoldLabels> g;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      if (gold[i].category != c) continue;
      p.push_back(predictions[i]);
      g.push_back(gold[i]);
    }
    if (p.empty()) continue;
    m.per_category.push_back({taxonomy.categories()[c], p.size(), hit_at_k_category(p, g, 1),
                              hit_at_k_disease_joint(p, g, taxonomy, 1)});
  }
  return m;
}

inline std::vector<Prediction> predict_dataset(const Model& model, const Dataset& ds, EvalMode mode) {
  std::vector<Prediction> out;
  out.reserve(ds.size());
  for (const auto& r : ds) out.push_back(predict_full(model, r, mode == EvalMode::text_only));
  return out;
}

inline MetricsReport evaluate(const Model& model, const Dataset& test, EvalMode mode) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  return metrics_from_predictions(model.taxonomy, predict_dataset(model, test, mode), gold_labels(model, test), mode);
}

inline MetricsReport evaluate(const Model& model, const Dataset& test) {
  return evaluate(model, test, model.config.text_only ? EvalMode::text_only : EvalMode::full);
}

}  // namespace pomp
