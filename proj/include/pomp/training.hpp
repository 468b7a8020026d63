#pragma once

#include "pomp/classifier.hpp"
#include "pomp/dataset.hpp"
#include "pomp/evaluation.hpp"
#include "pomp/linalg.hpp"
#include "pomp/model.hpp"
#include "pomp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pomp {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// -log max(p_target, eps). The printed form lacks the minus sign.
inline double cross_entropy(std::size_t target, const Vector& probs, double epsilon = kDefaultEpsilon) {
  return -std::log(std::max(probs[static_cast<Eigen::Index>(target)], epsilon));
}

inline double cross_entropy(const Vector& target_one_hot, const Vector& probs, double epsilon = kDefaultEpsilon) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (target_one_hot[i] != 0.0) loss -= target_one_hot[i] * std::log(std::max(probs[i], epsilon));
  }
  return loss;
}

inline double joint_loss(double category_ce, double disease_ce, double alpha) {
  return category_ce + alpha * disease_ce;
}

inline double joint_loss(std::size_t category_target, const Vector& category_probs, std::size_t disease_target,
                         const Vector& disease_probs, double alpha, double epsilon = kDefaultEpsilon) {
  return joint_loss(cross_entropy(category_target, category_probs, epsilon),
                    cross_entropy(disease_target, disease_probs, epsilon), alpha);
}

// Tier-2 head that receives the disease loss for a record, or nullopt when
// predicted routing lands on a category whose subset lacks the gold disease.
struct Route {
  std::optional<std::size_t> head;
  std::size_t local_target = 0;
};

inline Route resolve_route(const Model& model, const EncodedRecord& e) {
  Route r;
  std::size_t head = e.category;
  if (model.config.routing_mode == RoutingMode::predicted) {
    const auto& p = model.params;
    const Vector concat = encode_inputs(p, e, model.config, model.config.text_only);
    const Vector probs = predict_category(l2_normalize(fuse_linear(concat, p.fuse_w, p.fuse_b), model.config.epsilon),
                                          p.category_w, p.category_b);
    head = static_cast<std::size_t>(argmax(probs));
  }
  if (auto local = model.taxonomy.local_index(head, e.disease)) {
    r.head = head;
    r.local_target = *local;
  }
  return r;
}

namespace detail {

// Softmax + cross-entropy gradient w.r.t. logits; zero when the target
// probability sits under the epsilon floor.
inline Vector softmax_ce_grad(const Vector& probs, std::size_t target, double epsilon) {
  if (probs[static_cast<Eigen::Index>(target)] <= epsilon) return Vector::Zero(probs.size());
  Vector g = probs;
  g[static_cast<Eigen::Index>(target)] -= 1.0;
  return g;
}

inline void add_outer(Matrix& dst, const Vector& a, const Vector& b) { dst.noalias() += a * b.transpose(); }

}  // namespace detail

// Loss of one record; when grad is non-null its gradient is accumulated
// (unscaled) into grad.
inline double record_loss(const Model& model, const ModelParams& params, const EncodedRecord& e, const Route& route,
                          GradientSet* grad) {
  const auto& cfg = model.config;
  const double eps = cfg.epsilon;
  ForwardCache c;
  forward(params, e, cfg, cfg.text_only, route.head.value_or(e.category), c);

  double loss = cross_entropy(e.category, c.category_probs, eps);
  if (route.head) loss += cfg.alpha * cross_entropy(route.local_target, c.disease_probs, eps);
  if (grad == nullptr) return loss;

  const auto d_model = params.attention.bo.cols();
  const auto d_text = params.token_table.cols();

  const Vector d_logits1 = detail::softmax_ce_grad(c.category_probs, e.category, eps);
  detail::add_outer(grad->category_w, c.fused1, d_logits1);
  grad->category_b.row(0) += d_logits1.transpose();
  const Vector d_fuse1 = l2_normalize_backward(c.fuse1, params.category_w * d_logits1, eps);
  detail::add_outer(grad->fuse_w, c.concat, d_fuse1);
  grad->fuse_b.row(0) += d_fuse1.transpose();
  Vector d_concat = params.fuse_w * d_fuse1;

  if (route.head && cfg.alpha != 0.0) {
    const auto& h = params.heads[*route.head];
    auto& gh = grad->heads[*route.head];
    const Vector d_logits2 = cfg.alpha * detail::softmax_ce_grad(c.disease_probs, route.local_target, eps);
    detail::add_outer(gh.disease_w, c.fused2, d_logits2);
    gh.disease_b.row(0) += d_logits2.transpose();
    const Vector d_fuse2 = l2_normalize_backward(c.fuse2, h.disease_w * d_logits2, eps);
    detail::add_outer(gh.fuse_w, c.concat, d_fuse2);
    gh.fuse_b.row(0) += d_fuse2.transpose();
    d_concat += h.fuse_w * d_fuse2;
  }

  if (cfg.backend == TextBackend::trainable && !e.tokens.empty()) {
    const Vector d_pooled = l2_normalize_backward(c.pooled, d_concat.tail(d_text), eps);
    const Vector d_row = d_pooled / std::max(static_cast<double>(e.tokens.size()), eps);
    for (auto id : e.tokens) grad->token_table.row(id) += d_row.transpose();
  }

  if (!cfg.text_only) {
    const Matrix d_tokens =
        multi_head_attention_backward(c.attention, params.attention, d_concat.head(d_model), grad->attention);
    auto& f = grad->features;
    for (std::size_t k = 0; k < kContinuousCount; ++k) {
      const auto row = static_cast<Eigen::Index>(k);
      f.continuous_w.row(row) += e.continuous[k] * d_tokens.row(row);
      f.continuous_b.row(row) += d_tokens.row(row);
    }
    f.gender_table.row(static_cast<Eigen::Index>(e.gender)) += d_tokens.row(kGenderRow);
    f.pregnancy_table.row(static_cast<Eigen::Index>(e.pregnancy)) += d_tokens.row(kPregnancyRow);
  }
  return loss;
}

// Mean loss over a batch with fixed routes.
inline double batch_loss(const Model& model, const ModelParams& params, std::span<const EncodedRecord> batch,
                         const std::vector<Route>& routes) {
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) total += record_loss(model, params, batch[i], routes[i], nullptr);
  return total / static_cast<double>(batch.size());
}

struct BackwardResult {
  double loss = 0.0;
  GradientSet grads;
};

// Mean loss and its exact gradient. Routing is a fixed selection: no gradient
// flows through the argmax.
inline BackwardResult backward(const Model& model, std::span<const EncodedRecord> batch,
                               const std::vector<Route>* fixed_routes = nullptr) {
  if (batch.empty()) throw std::invalid_argument("backward: empty batch");
  BackwardResult out;
  out.grads = model.params.zeros_like();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Route route = fixed_routes != nullptr ? (*fixed_routes)[i] : resolve_route(model, batch[i]);
    out.loss += record_loss(model, model.params, batch[i], route, &out.grads);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  out.grads.visit([&](const std::string&, Matrix& m) { m *= inv; });
  return out;
}

struct FiniteDifferenceReport {
  std::size_t coordinates = 0;
  double max_relative_error = 0.0;
  std::string worst_tensor;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double tolerance = 0.0;
  // max_relative_error < tolerance.
  bool passed = false;
};

// |a - n| / max(|a|, |n|, floor): the floor keeps coordinates whose true
// gradient is zero from reporting round-off as relative error.
inline constexpr double kRelativeErrorFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
}

// Central differences on a random sample of coordinates from every tensor.
// Half of each tensor's sample is drawn from coordinates with a non-zero
// analytic gradient when any exist.
inline FiniteDifferenceReport finite_difference_check(const Model& model, std::span<const EncodedRecord> batch,
                                                      double step = 1e-5, double tolerance = 1e-4,
                                                      std::size_t min_coordinates = 200, std::uint64_t seed = 7) {
  std::vector<Route> routes;
  for (const auto& e : batch) routes.push_back(resolve_route(model, e));
  const auto analytic = backward(model, batch, &routes);

  FiniteDifferenceReport report;
  report.tolerance = tolerance;
  ModelParams probe = model.params;
  std::vector<std::pair<std::string, Matrix*>> tensors;
  probe.visit([&](const std::string& name, Matrix& m) { tensors.emplace_back(name, &m); });
  std::vector<const Matrix*> grads;
  analytic.grads.visit([&](const std::string&, const Matrix& m) { grads.push_back(&m); });

  const std::size_t per_tensor =
      std::max<std::size_t>(6, (min_coordinates + tensors.size() - 1) / tensors.size());
  Rng rng(seed);
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    Matrix& m = *tensors[t].second;
    const Matrix& g = *grads[t];
    const auto size = static_cast<std::size_t>(m.size());
    std::vector<std::size_t> nonzero;
    for (std::size_t i = 0; i < size; ++i) {
      if (g.data()[i] != 0.0) nonzero.push_back(i);
    }
    std::vector<std::size_t> picks;
    if (size <= per_tensor) {
      picks.resize(size);
      std::iota(picks.begin(), picks.end(), std::size_t{0});
    } else {
      for (std::size_t k = 0; k < per_tensor; ++k) {
        if (k % 2 == 0 && !nonzero.empty()) {
          picks.push_back(nonzero[rng.below(nonzero.size())]);
        } else {
          picks.push_back(static_cast<std::size_t>(rng.below(size)));
        }
      }
    }
    for (auto i : picks) {
      double& x = m.data()[i];
      const double saved = x;
      x = saved + step;
      const double up = batch_loss(model, probe, batch, routes);
      x = saved - step;
      const double down = batch_loss(model, probe, batch, routes);
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = g.data()[i];
      const double err = relative_error(a, numeric);
      ++report.coordinates;
      if (err >= report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_tensor = tensors[t].first;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

class Adam {
 public:
  explicit Adam(const ModelParams& like) : m_(like.zeros_like()), v_(like.zeros_like()) {}

  void step(ModelParams& params, const GradientSet& grads, const TrainingConfig& cfg) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    std::vector<Matrix*> p, m, v;
    std::vector<const Matrix*> g;
    params.visit([&](const std::string&, Matrix& x) { p.push_back(&x); });
    m_.visit([&](const std::string&, Matrix& x) { m.push_back(&x); });
    v_.visit([&](const std::string&, Matrix& x) { v.push_back(&x); });
    grads.visit([&](const std::string&, const Matrix& x) { g.push_back(&x); });
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i]->array() = cfg.beta1 * m[i]->array() + (1.0 - cfg.beta1) * g[i]->array();
      v[i]->array() = cfg.beta2 * v[i]->array() + (1.0 - cfg.beta2) * g[i]->array().square();
      p[i]->array() -= cfg.learning_rate * (m[i]->array() / bc1) / ((v[i]->array() / bc2).sqrt() + cfg.adam_epsilon);
    }
  }

 private:
  ModelParams m_;
  ModelParams v_;
  std::size_t t_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_category_hit_at_1 = 0.0;
  double val_disease_hit_at_1 = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},
            {"train_loss", train_loss},
            {"val_category_hit_at_1", val_category_hit_at_1},
            {"val_disease_hit_at_1", val_disease_hit_at_1}};
  }
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;

  nlohmann::json history_json() const {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : history) epochs.push_back(e.to_json());
    return {{"best_epoch", best_epoch}, {"epochs", epochs}};
  }
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch Adam over a model whose vocabulary and normalizer are already
// fitted. Keeps the parameters of the epoch with the best validation joint
// Hit@1 (the last epoch when val is empty).
inline TrainResult train(Model model, const Dataset& train_set, const Dataset& val_set,
                         const EpochCallback& on_epoch = {}) {
  const auto& cfg = model.config;
  cfg.validate();
  if (train_set.empty()) throw TrainingError("train: empty training set");
  const auto encoded = encode_dataset(model, train_set);
  const EvalMode mode = cfg.text_only ? EvalMode::text_only : EvalMode::full;
  std::vector<GoldLabels> val_gold;
  if (!val_set.empty()) val_gold = gold_labels(model, val_set);

  Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  Adam adam(model.params);
  std::vector<std::size_t> order(encoded.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EncodedRecord> batch;

  TrainResult result;
  double best_score = -1.0;
  ModelParams best_params = model.params;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const auto end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(encoded[order[i]]);
      auto step = backward(model, batch);
      if (!std::isfinite(step.loss) || !step.grads.all_finite())
        throw TrainingError("non-finite loss or gradient at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      loss_sum += step.loss * static_cast<double>(batch.size());
      adam.step(model.params, step.grads, cfg);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(encoded.size());
    double score = static_cast<double>(epoch);
    if (!val_set.empty()) {
      const auto preds = predict_dataset(model, val_set, mode);
      rec.val_category_hit_at_1 = hit_at_k_category(preds, val_gold, 1);
      rec.val_disease_hit_at_1 = hit_at_k_disease_joint(preds, val_gold, model.taxonomy, 1);
      score = rec.val_disease_hit_at_1;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (score > best_score) {
      best_score = score;
      best_params = model.params;
      result.best_epoch = epoch;
    }
  }
  model.params = std::move(best_params);
  result.model = std::move(model);
  return result;
}

// Fits vocabulary and normalizer on train_set, initializes, then trains.
inline TrainResult train(const Dataset& train_set, const Dataset& val_set, const Taxonomy& taxonomy,
                         const TrainingConfig& config, const EpochCallback& on_epoch = {}) {
  return train(make_model(config, taxonomy, train_set), train_set, val_set, on_epoch);
}

}  // namespace pomp
