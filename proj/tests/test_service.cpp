#include "pomp/service.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <thread>

using namespace pomp;

namespace {

Model service_model() {
  const auto data = testutil::small_synthetic(10, 40);
  return make_model(testutil::small_config(), data.taxonomy, data.dataset);
}

const nlohmann::json kRequest = {{"gender", "female"},
                                 {"age", 34},
                                 {"height", 162.5},
                                 {"weight", nullptr},
                                 {"symptom", "kwcat1 w3 w4"},
                                 {"pregnancy", "pregnant"}};

class ServerFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    service_ = std::make_unique<PredictionService>(service_model());
    configure_routes(server_, *service_, true);
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  httplib::Client client() { return httplib::Client("127.0.0.1", port_); }

  httplib::Server server_;
  std::unique_ptr<PredictionService> service_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace

TEST(PredictRequest, ParsesDefaultsAndRejectsBadFields) {
  const auto req = parse_predict_request(kRequest);
  EXPECT_EQ(req.top_k_categories, 3u);
  EXPECT_EQ(req.top_k_diseases, 10u);
  EXPECT_EQ(req.record.gender, Gender::female);
  EXPECT_FALSE(req.record.value(ContinuousFeature::weight).has_value());

  auto other = kRequest;
  other["gender"] = "other";
  try {
    parse_predict_request(other);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("gender"), std::string::npos);
  }
  auto unknown = kRequest;
  unknown["favourite_colour"] = "blue";
  EXPECT_THROW(parse_predict_request(unknown), DataError);
  auto k = kRequest;
  k["top_k_diseases"] = 2;
  EXPECT_EQ(parse_predict_request(k).top_k_diseases, 2u);
}

TEST(PredictionService, ResponseShape) {
  PredictionService svc(service_model());
  const auto [status, body] = svc.handle_predict(kRequest.dump());
  ASSERT_EQ(status, 200) << body.dump();
  EXPECT_EQ(body["categories"].size(), 3u);
  double total = 0.0;
  const auto full = predict_full(svc.model(), parse_predict_request(kRequest).record);
  for (Eigen::Index i = 0; i < full.category_probs.size(); ++i) total += full.category_probs[i];
  EXPECT_NEAR(total, 1.0, 1e-9);
  const auto& taxonomy = svc.model().taxonomy;
  EXPECT_EQ(body["selected_category"], taxonomy.categories()[full.selected_category]);
  EXPECT_EQ(body["diseases"].size(), std::min<std::size_t>(10, taxonomy.members(full.selected_category).size()));
  EXPECT_EQ(body["composite"].size(), std::min<std::size_t>(10, taxonomy.disease_count()));
  EXPECT_EQ(body["model_version"], svc.version());
  double prev = 2.0;
  for (const auto& c : body["categories"]) {
    EXPECT_LE(c["probability"].get<double>(), prev);
    prev = c["probability"].get<double>();
  }
  EXPECT_EQ(svc.handle_predict("{not json").first, 400);
  EXPECT_EQ(svc.requests_served(), 2u);
}

TEST_F(ServerFixture, HealthTaxonomyAndPredict) {
  auto cli = client();
  auto health = cli.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(nlohmann::json::parse(health->body)["status"], "ok");

  auto tax = cli.Get("/taxonomy");
  ASSERT_TRUE(tax);
  EXPECT_EQ(nlohmann::json::parse(tax->body), service_->model().taxonomy.to_json());

  auto a = cli.Post("/predict", kRequest.dump(), "application/json");
  auto b = cli.Post("/predict", kRequest.dump(), "application/json");
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->status, 200);
  EXPECT_EQ(a->body, b->body);
  EXPECT_EQ(a->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_EQ(nlohmann::json::parse(a->body), service_->predict(parse_predict_request(kRequest)));
}

TEST_F(ServerFixture, ClientErrors) {
  auto cli = client();
  auto other = kRequest;
  other["gender"] = "other";
  auto bad = cli.Post("/predict", other.dump(), "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  EXPECT_NE(nlohmann::json::parse(bad->body)["error"].get<std::string>().find("gender"), std::string::npos);

  auto big = kRequest;
  big["symptom"] = std::string(70 * 1024, 'a');
  auto too_large = cli.Post("/predict", big.dump(), "application/json");
  ASSERT_TRUE(too_large);
  EXPECT_EQ(too_large->status, 413);

  auto options = cli.Options("/predict");
  ASSERT_TRUE(options);
  EXPECT_EQ(options->status, 204);
}
