#pragma once

#include "pomp/checkpoint.hpp"
#include "pomp/classifier.hpp"
#include "pomp/dataset.hpp"
#include "pomp/evaluation.hpp"
#include "pomp/model.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>

namespace pomp {

inline constexpr std::size_t kMaxRequestBytes = 64 * 1024;

struct PredictRequest {
  PatientRecord record;  // labels unused
  std::size_t top_k_categories = 3;
  std::size_t top_k_diseases = 10;
};

// Throws DataError with a message naming the offending field.
inline PredictRequest parse_predict_request(const nlohmann::json& body, std::size_t expected_embedding_dim = 0) {
  if (!body.is_object()) throw DataError("request body must be a JSON object");
  PredictRequest req;
  nlohmann::json fields = body;
  auto take_k = [&](const char* key, std::size_t& out) {
    if (!fields.contains(key)) return;
    const auto& v = fields[key];
    if (!v.is_number_integer() || v.get<long long>() < 1)
      throw DataError(std::string("field '") + key + "' must be a positive integer");
    out = v.get<std::size_t>();
    fields.erase(key);
  };
  take_k("top_k_categories", req.top_k_categories);
  take_k("top_k_diseases", req.top_k_diseases);
  req.record = record_from_json(fields, false);
  if (auto err = validate_record(req.record, nullptr, expected_embedding_dim); !err.empty()) throw DataError(err);
  return req;
}

// Ranked lists use descending probability with index tie-break.
inline nlohmann::json prediction_to_json(const Model& model, const Prediction& p, std::size_t top_k_categories,
                                         std::size_t top_k_diseases, const std::string& version) {
  const auto& tax = model.taxonomy;
  nlohmann::json categories = nlohmann::json::array();
  const auto cat_rank = rank_indices(p.category_probs);
  for (std::size_t i = 0; i < std::min(top_k_categories, cat_rank.size()); ++i) {
    categories.push_back({{"category", tax.categories()[cat_rank[i]]},
                          {"probability", p.category_probs[static_cast<Eigen::Index>(cat_rank[i])]}});
  }
  nlohmann::json diseases = nlohmann::json::array();
  const auto& members = tax.members(p.selected_category);
  const auto dis_rank = rank_indices(p.disease_probs);
  for (std::size_t i = 0; i < std::min(top_k_diseases, dis_rank.size()); ++i) {
    diseases.push_back({{"disease", tax.diseases()[members[dis_rank[i]]]},
                        {"probability", p.disease_probs[static_cast<Eigen::Index>(dis_rank[i])]}});
  }
  nlohmann::json composite = nlohmann::json::array();
  const auto comp_rank = rank_indices(p.composite_scores);
  for (std::size_t i = 0; i < std::min(top_k_diseases, comp_rank.size()); ++i) {
    composite.push_back({{"disease", tax.diseases()[comp_rank[i]]},
                         {"score", p.composite_scores[static_cast<Eigen::Index>(comp_rank[i])]}});
  }
  return {{"categories", categories},
          {"selected_category", tax.categories()[p.selected_category]},
          {"diseases", diseases},
          {"composite", composite},
          {"model_version", version}};
}

// One immutable model shared by all request handlers.
class PredictionService {
 public:
  explicit PredictionService(Model model) : model_(std::move(model)), version_(model_version(model_)) {}

  const Model& model() const { return model_; }
  const std::string& version() const { return version_; }
  std::uint64_t requests_served() const { return requests_.load(); }

  nlohmann::json predict(const PredictRequest& req) const {
    const auto p = predict_full(model_, req.record);
    return prediction_to_json(model_, p, req.top_k_categories, req.top_k_diseases, version_);
  }

  // (status, body) for a raw POST /predict body.
  std::pair<int, nlohmann::json> handle_predict(const std::string& body) {
    ++requests_;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
      return {400, {{"error", "request body is not valid JSON"}}};
    }
    const std::size_t dim = model_.config.backend == TextBackend::precomputed ? model_.config.d_text : 0;
    try {
      const auto req = parse_predict_request(j, dim);
      if (dim != 0 && !req.record.text_embedding)
        return {400, {{"error", "field 'text_embedding' is required by this model"}}};
      return {200, predict(req)};
    } catch (const DataError& e) {
      return {400, {{"error", e.what()}}};
    }
  }

  nlohmann::json health() const { return {{"status", "ok"}, {"model_version", version_}}; }

  nlohmann::json taxonomy() const { return model_.taxonomy.to_json(); }

 private:
  Model model_;
  std::string version_;
  std::atomic<std::uint64_t> requests_{0};
};

inline void configure_routes(httplib::Server& server, PredictionService& service, bool cors) {
  constexpr const char* kJson = "application/json";
  server.set_payload_max_length(kMaxRequestBytes);
  if (cors) {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  }
  server.Post("/predict", [&service, kJson](const httplib::Request& req, httplib::Response& res) {
    if (req.body.size() > kMaxRequestBytes) {
      res.status = 413;
      res.set_content(nlohmann::json{{"error", "request body exceeds 64 KiB"}}.dump(), kJson);
      return;
    }
    auto [status, body] = service.handle_predict(req.body);
    res.status = status;
    res.set_content(body.dump(), kJson);
  });
  server.Get("/taxonomy", [&service, kJson](const httplib::Request&, httplib::Response& res) {
    res.set_content(service.taxonomy().dump(), kJson);
  });
  server.Get("/health", [&service, kJson](const httplib::Request&, httplib::Response& res) {
    res.set_content(service.health().dump(), kJson);
  });
}

}  // namespace pomp
