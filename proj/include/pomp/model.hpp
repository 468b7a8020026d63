#pragma once

#include "pomp/dataset.hpp"
#include "pomp/demographic_encoder.hpp"
#include "pomp/linalg.hpp"
#include "pomp/rng.hpp"
#include "pomp/text_encoder.hpp"
#include "pomp/tokenizer.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pomp {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Which tier-2 head receives the disease loss during training.
enum class RoutingMode { gold, predicted };

inline std::string_view to_string(RoutingMode m) { return m == RoutingMode::gold ? "gold" : "predicted"; }

struct TrainingConfig {
  double alpha = 1.0;
  double learning_rate = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 42;
  double epsilon = kDefaultEpsilon;
  std::size_t d_text = 64;
  std::size_t d_model = 64;
  std::size_t d_fuse = 64;
  std::size_t heads = 4;
  std::size_t max_len = 512;
  TextBackend backend = TextBackend::trainable;
  RoutingMode routing_mode = RoutingMode::gold;
  // Ablation: Emb_data forced to zero in training and inference.
  bool text_only = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    if (d_text < 1 || d_model < 1 || d_fuse < 1 || max_len < 1) throw ConfigError("dimensions must be >= 1");
    if (heads < 1 || d_model % heads != 0) throw ConfigError("d_model must be a positive multiple of heads");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0,1)");
    if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
  }

  nlohmann::json to_json() const {
    return {{"alpha", alpha},
            {"learning_rate", learning_rate},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"seed", seed},
            {"epsilon", epsilon},
            {"d_text", d_text},
            {"d_model", d_model},
            {"d_fuse", d_fuse},
            {"heads", heads},
            {"max_len", max_len},
            {"backend", std::string(to_string(backend))},
            {"routing_mode", std::string(to_string(routing_mode))},
            {"text_only", text_only},
            {"beta1", beta1},
            {"beta2", beta2},
            {"adam_epsilon", adam_epsilon}};
  }

  // Keys not present keep their defaults; unknown keys are rejected.
  static TrainingConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    TrainingConfig c;
    const auto known = c.to_json();
    for (const auto& [key, _] : j.items()) {
      if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    try {
      auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
      };
      get("alpha", c.alpha);
      get("learning_rate", c.learning_rate);
      get("epochs", c.epochs);
      get("batch_size", c.batch_size);
      get("seed", c.seed);
      get("epsilon", c.epsilon);
      get("d_text", c.d_text);
      get("d_model", c.d_model);
      get("d_fuse", c.d_fuse);
      get("heads", c.heads);
      get("max_len", c.max_len);
      get("text_only", c.text_only);
      get("beta1", c.beta1);
      get("beta2", c.beta2);
      get("adam_epsilon", c.adam_epsilon);
      if (j.contains("backend")) {
        const auto b = j.at("backend").get<std::string>();
        if (b == "trainable") {
          c.backend = TextBackend::trainable;
        } else if (b == "precomputed") {
          c.backend = TextBackend::precomputed;
        } else {
          throw ConfigError("backend must be \"trainable\" or \"precomputed\"");
        }
      }
      if (j.contains("routing_mode")) {
        const auto m = j.at("routing_mode").get<std::string>();
        if (m == "gold") {
          c.routing_mode = RoutingMode::gold;
        } else if (m == "predicted") {
          c.routing_mode = RoutingMode::predicted;
        } else {
          throw ConfigError("routing_mode must be \"gold\" or \"predicted\"");
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
  }

  bool operator==(const TrainingConfig&) const = default;
};

// Category-specific fusion linear and disease head.
struct CategoryHead {
  Matrix fuse_w;     // (d_model + d_text) x d_fuse
  Matrix fuse_b;     // 1 x d_fuse
  Matrix disease_w;  // d_fuse x |subset|
  Matrix disease_b;  // 1 x |subset|
};

struct ModelParams {
  Matrix token_table;  // vocab x d_text; row 0 is padding
  FeatureParams features;
  AttentionParams attention;
  Matrix fuse_w;      // (d_model + d_text) x d_fuse
  Matrix fuse_b;      // 1 x d_fuse
  Matrix category_w;  // d_fuse x |categories|
  Matrix category_b;  // 1 x |categories|
  std::vector<CategoryHead> heads;

  // Every tensor with a stable name, in serialization order.
  template <typename Self, typename Fn>
  static void visit_impl(Self& self, Fn&& fn) {
    fn("token_table", self.token_table);
    fn("gender_table", self.features.gender_table);
    fn("pregnancy_table", self.features.pregnancy_table);
    fn("continuous_w", self.features.continuous_w);
    fn("continuous_b", self.features.continuous_b);
    fn("attn.wq", self.attention.wq);
    fn("attn.bq", self.attention.bq);
    fn("attn.wk", self.attention.wk);
    fn("attn.bk", self.attention.bk);
    fn("attn.wv", self.attention.wv);
    fn("attn.bv", self.attention.bv);
    fn("attn.head_q", self.attention.head_q);
    fn("attn.head_k", self.attention.head_k);
    fn("attn.head_v", self.attention.head_v);
    fn("attn.wo", self.attention.wo);
    fn("attn.bo", self.attention.bo);
    fn("tier1.fuse_w", self.fuse_w);
    fn("tier1.fuse_b", self.fuse_b);
    fn("tier1.category_w", self.category_w);
    fn("tier1.category_b", self.category_b);
    for (std::size_t c = 0; c < self.heads.size(); ++c) {
      const std::string prefix = "tier2." + std::to_string(c) + ".";
      fn(prefix + "fuse_w", self.heads[c].fuse_w);
      fn(prefix + "fuse_b", self.heads[c].fuse_b);
      fn(prefix + "disease_w", self.heads[c].disease_w);
      fn(prefix + "disease_b", self.heads[c].disease_b);
    }
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    visit_impl(*this, std::forward<Fn>(fn));
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    visit_impl(*this, std::forward<Fn>(fn));
  }

  std::size_t tensor_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Matrix&) { ++n; });
    return n;
  }

  // Same shapes, all zeros. Used for gradients and optimizer moments.
  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.visit([](const std::string&, Matrix& m) { m.setZero(); });
    return z;
  }

  bool all_finite() const {
    bool ok = true;
    visit([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
    return ok;
  }

  bool operator==(const ModelParams& o) const {
    std::vector<const Matrix*> a, b;
    visit([&](const std::string&, const Matrix& m) { a.push_back(&m); });
    o.visit([&](const std::string&, const Matrix& m) { b.push_back(&m); });
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols() || *a[i] != *b[i]) return false;
    }
    return true;
  }
};

using GradientSet = ModelParams;

// Everything inference needs: parameters plus the frozen preprocessing state.
struct Model {
  ModelParams params;
  Taxonomy taxonomy;
  Vocabulary vocabulary;
  ContinuousNormalizer normalizer;
  TrainingConfig config;
};

namespace detail {

inline void init_uniform(Matrix& m, double fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / std::max(fan_in, 1.0));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
}

}  // namespace detail

// Allocates every tensor for the taxonomy and vocabulary and fills it with
// uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) draws from config.seed. Embedding
// tables use their row width as fan_in; the continuous lifts use 1.
inline ModelParams init_params(const TrainingConfig& config, const Taxonomy& taxonomy, std::size_t vocab_size) {
  config.validate();
  const auto d_text = static_cast<Eigen::Index>(config.d_text);
  const auto d_model = static_cast<Eigen::Index>(config.d_model);
  const auto d_fuse = static_cast<Eigen::Index>(config.d_fuse);
  const auto d_in = d_model + d_text;
  const auto cats = static_cast<Eigen::Index>(taxonomy.category_count());

  ModelParams p;
  p.token_table = Matrix::Zero(static_cast<Eigen::Index>(std::max<std::size_t>(vocab_size, 2)), d_text);
  p.features = FeatureParams::zeros(config.d_model);
  p.attention = AttentionParams::zeros(config.d_model, config.heads);
  p.fuse_w = Matrix::Zero(d_in, d_fuse);
  p.fuse_b = Matrix::Zero(1, d_fuse);
  p.category_w = Matrix::Zero(d_fuse, cats);
  p.category_b = Matrix::Zero(1, cats);
  for (auto n : taxonomy.label_count_per_head()) {
    const auto size = static_cast<Eigen::Index>(n);
    p.heads.push_back({Matrix::Zero(d_in, d_fuse), Matrix::Zero(1, d_fuse), Matrix::Zero(d_fuse, size),
                       Matrix::Zero(1, size)});
  }

  Rng rng(config.seed);
  const double dt = static_cast<double>(config.d_text);
  const double dm = static_cast<double>(config.d_model);
  const double df = static_cast<double>(config.d_fuse);
  const double din = dm + dt;
  const double dcat = static_cast<double>(p.attention.head_q.cols());
  p.visit([&](const std::string& name, Matrix& m) {
    double fan_in = 1.0;
    if (name == "token_table") {
      fan_in = dt;
    } else if (name == "gender_table" || name == "pregnancy_table") {
      fan_in = dm;
    } else if (name.rfind("attn.w", 0) == 0 && name != "attn.wo") {
      fan_in = dm;
    } else if (name.rfind("attn.b", 0) == 0 && name != "attn.bo") {
      fan_in = dm;
    } else if (name.rfind("attn.head_", 0) == 0) {
      fan_in = dm;
    } else if (name == "attn.wo" || name == "attn.bo") {
      fan_in = dcat;
    } else if (name.find("fuse_") != std::string::npos) {
      fan_in = din;
    } else if (name.find("category_") != std::string::npos || name.find("disease_") != std::string::npos) {
      fan_in = df;
    }
    detail::init_uniform(m, fan_in, rng);
  });
  p.token_table.row(Vocabulary::kPad).setZero();
  return p;
}

// A record reduced to model inputs: token ids of real (unpadded) tokens,
// normalized continuous values, enumeration indices and label indices.
struct EncodedRecord {
  std::vector<TokenId> tokens;
  Vector precomputed;  // normalized text embedding for the precomputed backend
  std::array<double, kContinuousCount> continuous{};
  Gender gender = Gender::female;
  Pregnancy pregnancy = Pregnancy::unknown;
  std::size_t category = 0;
  std::size_t disease = 0;  // global index
  bool labeled = false;
};

inline EncodedRecord encode_record(const Model& model, const PatientRecord& r, bool with_labels = true) {
  EncodedRecord e;
  if (model.config.backend == TextBackend::trainable) {
    const auto seq = tokenize(compose_sentence(r), model.vocabulary, model.config.max_len);
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
      if (seq.mask[i] != 0) e.tokens.push_back(seq.ids[i]);
    }
  } else {
    e.precomputed = encode_precomputed(r, model.config.epsilon);
    if (static_cast<std::size_t>(e.precomputed.size()) != model.config.d_text)
      throw DataError("text_embedding length " + std::to_string(e.precomputed.size()) + " does not match d_text " +
                      std::to_string(model.config.d_text));
  }
  e.continuous = model.normalizer.apply(r.continuous);
  e.gender = r.gender;
  e.pregnancy = r.pregnancy;
  if (with_labels) {
    auto c = model.taxonomy.category_index(r.category);
    auto d = model.taxonomy.disease_index(r.disease);
    if (!c || !d || !model.taxonomy.local_index(*c, *d))
      throw DataError("record labels (" + r.category + ", " + r.disease + ") are not in the model taxonomy");
    e.category = *c;
    e.disease = *d;
    e.labeled = true;
  }
  return e;
}

inline std::vector<EncodedRecord> encode_dataset(const Model& model, const Dataset& ds) {
  std::vector<EncodedRecord> out;
  out.reserve(ds.size());
  for (const auto& r : ds) out.push_back(encode_record(model, r));
  return out;
}

// Builds vocabulary and normalizer from the training split and initializes
// parameters.
inline Model make_model(const TrainingConfig& config, const Taxonomy& taxonomy, const Dataset& train) {
  config.validate();
  Model m;
  m.config = config;
  m.taxonomy = taxonomy;
  if (config.backend == TextBackend::trainable) {
    m.vocabulary = build_vocabulary(train);
  } else {
    m.vocabulary.freeze();
  }
  m.normalizer = fit_normalizer(train, config.epsilon);
  m.params = init_params(config, taxonomy, m.vocabulary.size());
  return m;
}

}  // namespace pomp
