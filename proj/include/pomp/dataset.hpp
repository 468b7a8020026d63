#pragma once

#include "pomp/linalg.hpp"
#include "pomp/rng.hpp"
#include "pomp/tokenizer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pomp {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Gender { female = 0, male = 1 };
enum class Pregnancy { not_pregnant = 0, pregnant = 1, unknown = 2 };

inline constexpr std::size_t kGenderCount = 2;
inline constexpr std::size_t kPregnancyCount = 3;

inline std::string_view to_string(Gender g) { return g == Gender::female ? "female" : "male"; }

inline std::string_view to_string(Pregnancy p) {
  switch (p) {
    case Pregnancy::not_pregnant: return "not_pregnant";
    case Pregnancy::pregnant: return "pregnant";
    case Pregnancy::unknown: return "unknown";
  }
  return "unknown";
}

inline std::optional<Gender> parse_gender(std::string_view s) {
  if (s == "female") return Gender::female;
  if (s == "male") return Gender::male;
  return std::nullopt;
}

inline std::optional<Pregnancy> parse_pregnancy(std::string_view s) {
  if (s == "not_pregnant") return Pregnancy::not_pregnant;
  if (s == "pregnant") return Pregnancy::pregnant;
  if (s == "unknown") return Pregnancy::unknown;
  return std::nullopt;
}

// Narrative fields, in file-key order.
enum class TextField { chronic = 0, surgery, therapy, usage, symptom, allergy };
inline constexpr std::size_t kTextFieldCount = 6;
inline constexpr std::array<std::string_view, kTextFieldCount> kTextFieldNames = {
    "chronic", "surgery", "therapy", "usage", "symptom", "allergy"};

inline std::optional<TextField> parse_text_field(std::string_view name) {
  for (std::size_t i = 0; i < kTextFieldCount; ++i) {
    if (kTextFieldNames[i] == name) return static_cast<TextField>(i);
  }
  return std::nullopt;
}

enum class ContinuousFeature { age = 0, height, weight, duration };
inline constexpr std::size_t kContinuousCount = 4;
inline constexpr std::array<std::string_view, kContinuousCount> kContinuousNames = {
    "age", "height", "weight", "duration"};

using ContinuousValues = std::array<std::optional<double>, kContinuousCount>;

// One consultation. Missing continuous values are std::nullopt (JSON null).
struct PatientRecord {
  std::array<std::string, kTextFieldCount> texts;
  ContinuousValues continuous;
  Gender gender = Gender::female;
  Pregnancy pregnancy = Pregnancy::unknown;
  std::string category;
  std::string disease;
  std::optional<std::vector<double>> text_embedding;

  const std::string& text(TextField f) const { return texts[static_cast<std::size_t>(f)]; }
  std::string& text(TextField f) { return texts[static_cast<std::size_t>(f)]; }
  const std::optional<double>& value(ContinuousFeature f) const {
    return continuous[static_cast<std::size_t>(f)];
  }
  std::optional<double>& value(ContinuousFeature f) { return continuous[static_cast<std::size_t>(f)]; }

  bool operator==(const PatientRecord&) const = default;
};

using Dataset = std::vector<PatientRecord>;

// Category list, global disease list and per-category disease subsets.
// Subsets may overlap. Ordering is fixed at construction.
class Taxonomy {
 public:
  Taxonomy() = default;

  Taxonomy(std::vector<std::string> categories, std::vector<std::string> diseases,
           std::vector<std::vector<std::string>> membership)
      : categories_(std::move(categories)), diseases_(std::move(diseases)) {
    if (categories_.empty()) throw DataError("taxonomy: no categories");
    if (membership.size() != categories_.size())
      throw DataError("taxonomy: membership size does not match category count");
    for (std::size_t i = 0; i < categories_.size(); ++i) {
      if (!category_index_.emplace(categories_[i], i).second)
        throw DataError("taxonomy: duplicate category '" + categories_[i] + "'");
    }
    for (std::size_t i = 0; i < diseases_.size(); ++i) {
      if (!disease_index_.emplace(diseases_[i], i).second)
        throw DataError("taxonomy: duplicate disease '" + diseases_[i] + "'");
    }
    std::vector<bool> covered(diseases_.size(), false);
    members_.resize(categories_.size());
    local_index_.resize(categories_.size());
    for (std::size_t c = 0; c < categories_.size(); ++c) {
      if (membership[c].empty())
        throw DataError("taxonomy: category '" + categories_[c] + "' has no diseases");
      for (const auto& d : membership[c]) {
        auto it = disease_index_.find(d);
        if (it == disease_index_.end())
          throw DataError("taxonomy: category '" + categories_[c] + "' lists unknown disease '" + d + "'");
        if (!local_index_[c].emplace(it->second, members_[c].size()).second)
          throw DataError("taxonomy: category '" + categories_[c] + "' lists '" + d + "' twice");
        members_[c].push_back(it->second);
        covered[it->second] = true;
      }
    }
    for (std::size_t d = 0; d < diseases_.size(); ++d) {
      if (!covered[d]) throw DataError("taxonomy: disease '" + diseases_[d] + "' belongs to no category");
    }
  }

  const std::vector<std::string>& categories() const { return categories_; }
  const std::vector<std::string>& diseases() const { return diseases_; }
  std::size_t category_count() const { return categories_.size(); }
  std::size_t disease_count() const { return diseases_.size(); }

  // Global disease indices of a category's subset, in subset order.
  const std::vector<std::size_t>& members(std::size_t category) const { return members_.at(category); }

  // Output size of each tier-2 head.
  std::vector<std::size_t> label_count_per_head() const {
    std::vector<std::size_t> out;
    for (const auto& m : members_) out.push_back(m.size());
    return out;
  }

  std::optional<std::size_t> category_index(const std::string& id) const {
    auto it = category_index_.find(id);
    if (it == category_index_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<std::size_t> disease_index(const std::string& id) const {
    auto it = disease_index_.find(id);
    if (it == disease_index_.end()) return std::nullopt;
    return it->second;
  }

  // Position of a global disease inside a category's subset.
  std::optional<std::size_t> local_index(std::size_t category, std::size_t disease) const {
    const auto& m = local_index_.at(category);
    auto it = m.find(disease);
    if (it == m.end()) return std::nullopt;
    return it->second;
  }

  nlohmann::json to_json() const {
    nlohmann::json membership = nlohmann::json::object();
    for (std::size_t c = 0; c < categories_.size(); ++c) {
      nlohmann::json list = nlohmann::json::array();
      for (auto d : members_[c]) list.push_back(diseases_[d]);
      membership[categories_[c]] = std::move(list);
    }
    return {{"categories", categories_}, {"diseases", diseases_}, {"membership", membership}};
  }

  static Taxonomy from_json(const nlohmann::json& j) {
    try {
      auto categories = j.at("categories").get<std::vector<std::string>>();
      auto diseases = j.at("diseases").get<std::vector<std::string>>();
      const auto& mem = j.at("membership");
      if (!mem.is_object()) throw DataError("taxonomy: membership must be an object");
      std::vector<std::vector<std::string>> membership;
      for (const auto& c : categories) {
        if (!mem.contains(c)) throw DataError("taxonomy: membership missing category '" + c + "'");
        membership.push_back(mem.at(c).get<std::vector<std::string>>());
      }
      if (mem.size() != categories.size()) throw DataError("taxonomy: membership lists unknown categories");
      return Taxonomy(std::move(categories), std::move(diseases), std::move(membership));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("taxonomy: ") + e.what());
    }
  }

  bool operator==(const Taxonomy& o) const {
    return categories_ == o.categories_ && diseases_ == o.diseases_ && members_ == o.members_;
  }

 private:
  std::vector<std::string> categories_;
  std::vector<std::string> diseases_;
  std::vector<std::vector<std::size_t>> members_;
  std::map<std::string, std::size_t> category_index_;
  std::map<std::string, std::size_t> disease_index_;
  std::vector<std::map<std::size_t, std::size_t>> local_index_;
};

inline Taxonomy load_taxonomy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open taxonomy file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return Taxonomy::from_json(j);
}

inline void save_taxonomy(const Taxonomy& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write taxonomy file: " + path);
  out << t.to_json().dump(2) << '\n';
}

// Checks record invariants. Returns an error message, or empty when valid.
// expected_embedding_dim == 0 skips the embedding length check.
inline std::string validate_record(const PatientRecord& r, const Taxonomy* taxonomy,
                                   std::size_t expected_embedding_dim = 0) {
  for (std::size_t f = 0; f < kContinuousCount; ++f) {
    const auto& v = r.continuous[f];
    if (v && (!std::isfinite(*v) || *v < 0.0))
      return std::string(kContinuousNames[f]) + " must be finite and >= 0";
  }
  if (r.text_embedding) {
    for (double x : *r.text_embedding) {
      if (!std::isfinite(x)) return "text_embedding has non-finite entries";
    }
    if (expected_embedding_dim != 0 && r.text_embedding->size() != expected_embedding_dim)
      return "text_embedding has length " + std::to_string(r.text_embedding->size()) + ", expected " +
             std::to_string(expected_embedding_dim);
  }
  if (taxonomy != nullptr) {
    auto c = taxonomy->category_index(r.category);
    if (!c) return "unknown category label '" + r.category + "'";
    auto d = taxonomy->disease_index(r.disease);
    if (!d) return "unknown disease label '" + r.disease + "'";
    if (!taxonomy->local_index(*c, *d))
      return "disease label '" + r.disease + "' is not in category '" + r.category + "'";
  }
  return {};
}

namespace detail {

inline const std::set<std::string, std::less<>>& record_keys() {
  static const std::set<std::string, std::less<>> keys = {
      "chronic", "surgery", "therapy", "usage",  "symptom",  "allergy",  "age",           "height",
      "weight",  "duration", "gender", "pregnancy", "category", "disease", "text_embedding"};
  return keys;
}

}  // namespace detail

// Parses the narrative and demographic part of a record object. Labels are
// read only when with_labels is set. Throws DataError naming the field.
inline PatientRecord record_from_json(const nlohmann::json& j, bool with_labels = true) {
  if (!j.is_object()) throw DataError("record must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (detail::record_keys().count(key) == 0 || (!with_labels && (key == "category" || key == "disease")))
      throw DataError("unknown field '" + key + "'");
  }
  PatientRecord r;
  for (std::size_t f = 0; f < kTextFieldCount; ++f) {
    const std::string key(kTextFieldNames[f]);
    if (!j.contains(key) || j[key].is_null()) continue;
    if (!j[key].is_string()) throw DataError("field '" + key + "' must be a string");
    r.texts[f] = j[key].get<std::string>();
  }
  for (std::size_t f = 0; f < kContinuousCount; ++f) {
    const std::string key(kContinuousNames[f]);
    if (!j.contains(key) || j[key].is_null()) continue;
    if (!j[key].is_number()) throw DataError("field '" + key + "' must be a number or null");
    const double v = j[key].get<double>();
    if (!std::isfinite(v) || v < 0.0) throw DataError("field '" + key + "' must be finite and >= 0");
    r.continuous[f] = v;
  }
  if (!j.contains("gender") || !j["gender"].is_string())
    throw DataError("field 'gender' must be \"female\" or \"male\"");
  auto g = parse_gender(j["gender"].get<std::string>());
  if (!g) throw DataError("field 'gender' must be \"female\" or \"male\"");
  r.gender = *g;
  if (j.contains("pregnancy") && !j["pregnancy"].is_null()) {
    if (!j["pregnancy"].is_string()) throw DataError("field 'pregnancy' must be a string");
    auto p = parse_pregnancy(j["pregnancy"].get<std::string>());
    if (!p) throw DataError("field 'pregnancy' must be one of not_pregnant, pregnant, unknown");
    r.pregnancy = *p;
  }
  if (j.contains("text_embedding") && !j["text_embedding"].is_null()) {
    const auto& e = j["text_embedding"];
    if (!e.is_array()) throw DataError("field 'text_embedding' must be an array of numbers");
    std::vector<double> v;
    v.reserve(e.size());
    for (const auto& x : e) {
      if (!x.is_number()) throw DataError("field 'text_embedding' must be an array of numbers");
      v.push_back(x.get<double>());
    }
    r.text_embedding = std::move(v);
  }
  if (with_labels) {
    if (!j.contains("category") || !j["category"].is_string()) throw DataError("field 'category' missing");
    if (!j.contains("disease") || !j["disease"].is_string()) throw DataError("field 'disease' missing");
    r.category = j["category"].get<std::string>();
    r.disease = j["disease"].get<std::string>();
  }
  return r;
}

inline nlohmann::json record_to_json(const PatientRecord& r, bool with_labels = true) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t f = 0; f < kTextFieldCount; ++f) j[std::string(kTextFieldNames[f])] = r.texts[f];
  for (std::size_t f = 0; f < kContinuousCount; ++f) {
    const std::string key(kContinuousNames[f]);
    if (r.continuous[f]) {
      j[key] = *r.continuous[f];
    } else {
      j[key] = nullptr;
    }
  }
  j["gender"] = std::string(to_string(r.gender));
  j["pregnancy"] = std::string(to_string(r.pregnancy));
  if (with_labels) {
    j["category"] = r.category;
    j["disease"] = r.disease;
  }
  if (r.text_embedding) j["text_embedding"] = *r.text_embedding;
  return j;
}

inline Dataset parse_dataset(std::istream& in, const Taxonomy& taxonomy, const std::string& source,
                             std::size_t expected_embedding_dim = 0) {
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": malformed JSON (" + e.what() + ")");
    }
    PatientRecord r;
    try {
      r = record_from_json(j);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    if (auto err = validate_record(r, &taxonomy, expected_embedding_dim); !err.empty())
      throw DataError(where + ": record rejected: " + err);
    ds.push_back(std::move(r));
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path, const Taxonomy& taxonomy,
                            std::size_t expected_embedding_dim = 0) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  return parse_dataset(in, taxonomy, path, expected_embedding_dim);
}

inline void write_dataset(std::ostream& out, const Dataset& ds) {
  for (const auto& r : ds) out << record_to_json(r).dump() << '\n';
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file: " + path);
  write_dataset(out, ds);
}

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  Dataset train;
  Dataset val;
  Dataset test;
  std::vector<std::string> warnings;
};

// Stratified by category label. Each split keeps file order. A category with
// fewer records than non-empty splits goes entirely to train, with a warning.
inline DatasetSplit split_dataset(const Dataset& ds, SplitRatios ratios, std::uint64_t seed) {
  const std::array<double, 3> r = {ratios.train, ratios.val, ratios.test};
  for (double x : r) {
    if (!(x >= 0.0)) throw DataError("split ratios must be non-negative");
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw DataError("split ratios must sum to 1");

  std::map<std::string, std::vector<std::size_t>> by_category;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto [it, inserted] = by_category.try_emplace(ds[i].category);
    if (inserted) order.push_back(ds[i].category);
    it->second.push_back(i);
  }

  std::size_t active = 0;
  for (double x : r) active += x > 0.0 ? 1 : 0;

  Rng rng(seed);
  std::vector<int> assignment(ds.size(), 0);
  DatasetSplit out;
  for (const auto& cat : order) {
    auto idx = by_category[cat];
    rng.shuffle(idx);
    const std::size_t n = idx.size();
    std::array<std::size_t, 3> counts = {0, 0, 0};
    if (n < active) {
      counts[0] = n;
      out.warnings.push_back("category '" + cat + "' has " + std::to_string(n) +
                             " records, fewer than the number of splits; all assigned to train");
    } else {
      std::array<double, 3> frac{};
      std::size_t used = 0;
      for (std::size_t s = 0; s < 3; ++s) {
        const double exact = r[s] * static_cast<double>(n);
        counts[s] = static_cast<std::size_t>(std::floor(exact));
        frac[s] = exact - static_cast<double>(counts[s]);
        used += counts[s];
      }
      while (used < n) {
        std::size_t best = 0;
        for (std::size_t s = 1; s < 3; ++s) {
          if (frac[s] > frac[best]) best = s;
        }
        ++counts[best];
        frac[best] = -1.0;
        ++used;
      }
      const std::size_t floor_count = std::min<std::size_t>(2, n / active);
      for (std::size_t s = 0; s < 3; ++s) {
        while (r[s] > 0.0 && counts[s] < floor_count) {
          std::size_t donor = 3;
          for (std::size_t t = 0; t < 3; ++t) {
            if (t != s && counts[t] > floor_count && (donor == 3 || counts[t] > counts[donor])) donor = t;
          }
          if (donor == 3) break;
          --counts[donor];
          ++counts[s];
        }
      }
    }
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < counts[static_cast<std::size_t>(s)]; ++k) assignment[idx[pos++]] = s;
    }
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    (assignment[i] == 0 ? out.train : assignment[i] == 1 ? out.val : out.test).push_back(ds[i]);
  }
  return out;
}

// Per-feature scaling of continuous values by the training-split maximum,
// floored at epsilon. Missing values are imputed with the training mean.
struct ContinuousNormalizer {
  std::array<double, kContinuousCount> scale{1.0, 1.0, 1.0, 1.0};
  std::array<double, kContinuousCount> mean{0.0, 0.0, 0.0, 0.0};
  double epsilon = kDefaultEpsilon;

  std::array<double, kContinuousCount> apply(const ContinuousValues& values) const {
    std::array<double, kContinuousCount> out{};
    for (std::size_t f = 0; f < kContinuousCount; ++f) {
      out[f] = values[f].value_or(mean[f]) / scale[f];
    }
    return out;
  }

  nlohmann::json to_json() const {
    return {{"scale", scale}, {"mean", mean}, {"epsilon", epsilon}};
  }

  static ContinuousNormalizer from_json(const nlohmann::json& j) {
    ContinuousNormalizer n;
    n.scale = j.at("scale").get<std::array<double, kContinuousCount>>();
    n.mean = j.at("mean").get<std::array<double, kContinuousCount>>();
    n.epsilon = j.at("epsilon").get<double>();
    return n;
  }

  bool operator==(const ContinuousNormalizer&) const = default;
};

inline ContinuousNormalizer fit_normalizer(const Dataset& train, double epsilon = kDefaultEpsilon) {
  if (train.empty()) throw DataError("fit_normalizer: empty training split");
  ContinuousNormalizer n;
  n.epsilon = epsilon;
  for (std::size_t f = 0; f < kContinuousCount; ++f) {
    double max_abs = 0.0;
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& r : train) {
      if (const auto& v = r.continuous[f]) {
        max_abs = std::max(max_abs, std::abs(*v));
        sum += *v;
        ++count;
      }
    }
    n.scale[f] = std::max(max_abs, epsilon);
    n.mean[f] = count == 0 ? 0.0 : sum / static_cast<double>(count);
  }
  return n;
}

struct StatsReport {
  std::size_t record_count = 0;
  std::map<std::string, std::size_t> records_per_category;
  std::map<std::string, std::size_t> diseases_per_category;
  double avg_tokens_per_patient = 0.0;
  std::map<std::string, std::size_t> gender_histogram;
  // Ten-year age buckets keyed "0-9", ..., "90+", plus "missing".
  std::map<std::string, std::size_t> age_histogram;

  nlohmann::json to_json() const {
    return {{"record_count", record_count},
            {"records_per_category", records_per_category},
            {"diseases_per_category", diseases_per_category},
            {"avg_tokens_per_patient", avg_tokens_per_patient},
            {"gender_histogram", gender_histogram},
            {"age_histogram", age_histogram}};
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "records: " << record_count << "\n";
    os << "avg tokens per patient: " << avg_tokens_per_patient << "\n";
    os << "category\trecords\tdiseases\n";
    for (const auto& [cat, n] : records_per_category) {
      os << cat << '\t' << n << '\t' << diseases_per_category.at(cat) << '\n';
    }
    os << "gender:";
    for (const auto& [g, n] : gender_histogram) os << ' ' << g << '=' << n;
    os << "\nage:";
    for (const auto& [a, n] : age_histogram) os << ' ' << a << '=' << n;
    os << '\n';
    return os.str();
  }
};

inline std::string age_bucket(const std::optional<double>& age) {
  if (!age) return "missing";
  const int decade = static_cast<int>(*age / 10.0);
  if (decade >= 9) return "90+";
  return std::to_string(decade * 10) + "-" + std::to_string(decade * 10 + 9);
}

// Token counts cover the six raw narrative fields.
inline StatsReport dataset_stats(const Dataset& ds) {
  StatsReport s;
  s.record_count = ds.size();
  if (ds.empty()) return s;
  std::map<std::string, std::set<std::string>> distinct;
  std::size_t tokens = 0;
  for (const auto& r : ds) {
    ++s.records_per_category[r.category];
    distinct[r.category].insert(r.disease);
    for (const auto& t : r.texts) tokens += count_tokens(t);
    ++s.gender_histogram[std::string(to_string(r.gender))];
    ++s.age_histogram[age_bucket(r.value(ContinuousFeature::age))];
  }
  for (const auto& [cat, set] : distinct) s.diseases_per_category[cat] = set.size();
  s.avg_tokens_per_patient = static_cast<double>(tokens) / static_cast<double>(ds.size());
  return s;
}

}  // namespace pomp
