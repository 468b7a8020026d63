#pragma once

#include "pomp/dataset.hpp"
#include "pomp/rng.hpp"
#include "pomp/tokenizer.hpp"

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace pomp {

// Shape of a generated dataset. Category count is records_per_category.size().
struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::vector<std::size_t> records_per_category;
  std::vector<std::size_t> diseases_per_category;
  // Fraction of the smaller neighbour's subset shared between adjacent categories.
  double overlap = 0.0;
  // When set, the disease also depends on whether age >= age_threshold.
  bool demographic_dependence = false;
  double age_threshold = 50.0;
  std::size_t vocab_size = 50;
  std::size_t tokens_per_field = 6;
  // Length of a precomputed text_embedding attached to each record; 0 = none.
  std::size_t embedding_dim = 0;

  std::size_t category_count() const { return records_per_category.size(); }

  // Per-category counts of the six-category consultation corpus (30,739
  // records in total, 248 subset slots).
  static SyntheticSpec haodf_shaped(std::uint64_t seed = 1) {
    SyntheticSpec s;
    s.seed = seed;
    s.records_per_category = {1413, 4157, 4543, 4965, 6143, 9518};
    s.diseases_per_category = {29, 41, 63, 31, 29, 55};
    s.overlap = 0.3;
    return s;
  }

  static SyntheticSpec uniform(std::size_t categories, std::size_t diseases, std::size_t records,
                               std::uint64_t seed = 1) {
    SyntheticSpec s;
    s.seed = seed;
    s.records_per_category.assign(categories, records);
    s.diseases_per_category.assign(categories, diseases);
    return s;
  }

  void validate() const {
    if (records_per_category.empty()) throw DataError("synthetic spec: at least one category required");
    if (records_per_category.size() != diseases_per_category.size())
      throw DataError("synthetic spec: records and diseases per category differ in length");
    for (auto n : records_per_category) {
      if (n < 1) throw DataError("synthetic spec: records per category must be >= 1");
    }
    for (auto n : diseases_per_category) {
      if (n < 1) throw DataError("synthetic spec: diseases per category must be >= 1");
    }
    if (!(overlap >= 0.0 && overlap < 1.0)) throw DataError("synthetic spec: overlap must be in [0,1)");
    if (vocab_size < 1 || tokens_per_field < 1)
      throw DataError("synthetic spec: vocab_size and tokens_per_field must be >= 1");
  }
};

inline std::string category_keyword(std::size_t category) { return "kwcat" + std::to_string(category); }

inline std::string disease_keyword(std::size_t category, std::size_t k) {
  return "kwdis" + std::to_string(category) + "x" + std::to_string(k);
}

// The generator's labeling rule. The category comes from a keyword in the
// symptom text; the disease from a second keyword and, with demographic
// dependence, from the age threshold.
class OracleRule {
 public:
  OracleRule() = default;
  OracleRule(Taxonomy taxonomy, bool demographic_dependence, double age_threshold)
      : taxonomy_(std::move(taxonomy)),
        demographic_(demographic_dependence),
        age_threshold_(age_threshold) {
    for (std::size_t c = 0; c < taxonomy_.category_count(); ++c) {
      category_by_keyword_[category_keyword(c)] = c;
      for (std::size_t k = 0; k < keyword_count(c); ++k) keyword_by_token_[disease_keyword(c, k)] = {c, k};
    }
  }

  const Taxonomy& taxonomy() const { return taxonomy_; }
  bool demographic_dependence() const { return demographic_; }
  double age_threshold() const { return age_threshold_; }

  std::size_t keyword_count(std::size_t category) const {
    const auto n = taxonomy_.members(category).size();
    return demographic_ && n > 1 ? n - 1 : n;
  }

  // Local disease position for a keyword index and age.
  std::size_t disease_position(std::size_t category, std::size_t keyword, double age) const {
    const auto n = taxonomy_.members(category).size();
    if (!demographic_ || n == 1) return keyword;
    return keyword + (age >= age_threshold_ ? 1 : 0);
  }

  // (category id, disease id), or nullopt when the symptom text carries no
  // recognizable keywords.
  std::optional<std::pair<std::string, std::string>> label(const PatientRecord& r) const {
    std::optional<std::size_t> category;
    const auto tokens = split_tokens(r.text(TextField::symptom));
    for (const auto& t : tokens) {
      if (auto it = category_by_keyword_.find(t); it != category_by_keyword_.end()) {
        category = it->second;
        break;
      }
    }
    if (!category) return std::nullopt;
    for (const auto& t : tokens) {
      auto it = keyword_by_token_.find(t);
      if (it == keyword_by_token_.end() || it->second.first != *category) continue;
      const double age = r.value(ContinuousFeature::age).value_or(0.0);
      const auto pos = disease_position(*category, it->second.second, age);
      const auto disease = taxonomy_.members(*category)[pos];
      return std::make_pair(taxonomy_.categories()[*category], taxonomy_.diseases()[disease]);
    }
    return std::nullopt;
  }

  // Fraction of records whose stored labels the rule reproduces (both tiers).
  double accuracy(const Dataset& ds) const {
    if (ds.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& r : ds) {
      auto l = label(r);
      if (l && l->first == r.category && l->second == r.disease) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
  }

 private:
  Taxonomy taxonomy_;
  bool demographic_ = false;
  double age_threshold_ = 50.0;
  std::map<std::string, std::size_t> category_by_keyword_;
  std::map<std::string, std::pair<std::size_t, std::size_t>> keyword_by_token_;
};

struct SyntheticData {
  Dataset dataset;
  Taxonomy taxonomy;
  OracleRule oracle;
};

namespace detail {

inline std::string synthetic_category_name(std::size_t c, std::size_t total) {
  static const std::vector<std::string> six = {"cold", "diabetes", "chd", "depression", "pneumonia", "lung_cancer"};
  if (total == six.size()) return six[c];
  return "category_" + std::to_string(c);
}

inline Taxonomy synthetic_taxonomy(const SyntheticSpec& spec) {
  const auto cats = spec.category_count();
  std::vector<std::string> categories;
  std::vector<std::string> diseases;
  std::vector<std::vector<std::string>> membership(cats);
  std::size_t total_slots = 0;
  for (auto n : spec.diseases_per_category) total_slots += n;
  const int width = std::max<int>(3, static_cast<int>(std::to_string(total_slots).size()));
  auto new_disease = [&] {
    std::ostringstream os;
    os << "D" << std::setw(width) << std::setfill('0') << diseases.size();
    diseases.push_back(os.str());
    return diseases.back();
  };
  for (std::size_t c = 0; c < cats; ++c) {
    categories.push_back(synthetic_category_name(c, cats));
    const auto n = spec.diseases_per_category[c];
    std::size_t shared = 0;
    if (c > 0) {
      const auto prev = spec.diseases_per_category[c - 1];
      shared = static_cast<std::size_t>(std::floor(spec.overlap * static_cast<double>(std::min(prev, n))));
      const auto& prev_members = membership[c - 1];
      for (std::size_t k = prev_members.size() - shared; k < prev_members.size(); ++k)
        membership[c].push_back(prev_members[k]);
    }
    while (membership[c].size() < n) membership[c].push_back(new_disease());
  }
  return Taxonomy(std::move(categories), std::move(diseases), std::move(membership));
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stand-in for a frozen sentence encoder: the mean of fixed per-token
// pseudo-random vectors over every token of the narrative.
inline std::vector<double> hashed_text_embedding(const PatientRecord& r, std::size_t dim) {
  std::vector<double> out(dim, 0.0);
  std::size_t count = 0;
  for (const auto& text : r.texts) {
    for (const auto& tok : split_tokens(text)) {
      Rng g(fnv1a(tok));
      for (auto& x : out) x += g.uniform(-1.0, 1.0);
      ++count;
    }
  }
  if (count > 0) {
    for (auto& x : out) x /= static_cast<double>(count);
  }
  return out;
}

inline double round_to(double v, double step) { return std::round(v / step) * step; }

}  // namespace detail

// Deterministic for a fixed spec. Records are grouped by category in
// taxonomy order.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Taxonomy taxonomy = detail::synthetic_taxonomy(spec);
  OracleRule oracle(taxonomy, spec.demographic_dependence, spec.age_threshold);
  Rng rng(spec.seed);

  auto filler = [&](std::size_t count) {
    std::vector<std::string> words;
    for (std::size_t i = 0; i < count; ++i) words.push_back("w" + std::to_string(rng.below(spec.vocab_size)));
    return words;
  };
  auto join = [](const std::vector<std::string>& words) {
    std::string s;
    for (const auto& w : words) {
      if (!s.empty()) s += ' ';
      s += w;
    }
    return s;
  };

  Dataset ds;
  for (std::size_t c = 0; c < spec.category_count(); ++c) {
    const auto& members = taxonomy.members(c);
    for (std::size_t i = 0; i < spec.records_per_category[c]; ++i) {
      PatientRecord r;
      r.gender = rng.bernoulli(0.5) ? Gender::male : Gender::female;
      const double age = static_cast<double>(1 + rng.below(90));
      r.value(ContinuousFeature::age) = age;
      if (!rng.bernoulli(0.02)) {
        const double base = r.gender == Gender::male ? 160.0 : 150.0;
        r.value(ContinuousFeature::height) = detail::round_to(base + rng.uniform(0.0, 30.0), 0.1);
      }
      if (!rng.bernoulli(0.02)) {
        r.value(ContinuousFeature::weight) = detail::round_to(45.0 + rng.uniform(0.0, 55.0), 0.1);
      }
      r.value(ContinuousFeature::duration) = static_cast<double>(rng.below(366));
      if (r.gender == Gender::male) {
        r.pregnancy = Pregnancy::unknown;
      } else if (age >= 18 && age <= 45) {
        const double u = rng.uniform();
        r.pregnancy = u < 0.1 ? Pregnancy::pregnant : u < 0.9 ? Pregnancy::not_pregnant : Pregnancy::unknown;
      } else {
        r.pregnancy = rng.bernoulli(0.85) ? Pregnancy::not_pregnant : Pregnancy::unknown;
      }

      const auto keyword = static_cast<std::size_t>(rng.below(oracle.keyword_count(c)));
      const auto pos = oracle.disease_position(c, keyword, age);

      for (std::size_t f = 0; f < kTextFieldCount; ++f) {
        const auto field = static_cast<TextField>(f);
        if (field == TextField::symptom) {
          auto words = filler(spec.tokens_per_field);
          words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)),
                       category_keyword(c));
          words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)),
                       disease_keyword(c, keyword));
          r.text(field) = join(words);
          continue;
        }
        const double empty_prob = field == TextField::allergy ? 0.5
                                  : (field == TextField::surgery || field == TextField::therapy) ? 0.3
                                                                                                  : 0.1;
        if (!rng.bernoulli(empty_prob)) r.text(field) = join(filler(spec.tokens_per_field));
      }
      r.category = taxonomy.categories()[c];
      r.disease = taxonomy.diseases()[members[pos]];
      if (spec.embedding_dim > 0) r.text_embedding = detail::hashed_text_embedding(r, spec.embedding_dim);
      ds.push_back(std::move(r));
    }
  }
  return {std::move(ds), std::move(taxonomy), std::move(oracle)};
}

}  // namespace pomp
