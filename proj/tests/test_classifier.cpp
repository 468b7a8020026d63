#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pomp;

TEST(Fuse, LinearThenNormalize) {
  const Vector data = Vector::Ones(2);
  const Vector text = Vector::Zero(2);
  Matrix w = Matrix::Zero(4, 3);
  w(0, 0) = 3.0;
  w(1, 1) = 4.0;
  const Matrix b = Matrix::Zero(1, 3);
  const auto fused = fuse_embeddings(data, text, w, b);
  EXPECT_DOUBLE_EQ(fused[0], 0.6);
  EXPECT_DOUBLE_EQ(fused[1], 0.8);
  EXPECT_DOUBLE_EQ(fused[2], 0.0);

  const auto zero = fuse_embeddings(data, text, Matrix::Zero(4, 3), b);
  EXPECT_EQ(zero, Vector::Zero(3));

  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto f = fuse_embeddings(testutil::random_vector(rng, 5), testutil::random_vector(rng, 3),
                                   testutil::random_matrix(rng, 8, 4), testutil::random_matrix(rng, 1, 4));
    EXPECT_NEAR(f.norm(), 1.0, 1e-6);
  }
}

TEST(Softmax, Properties) {
  EXPECT_LT((softmax(Vector::Zero(6)).array() - 1.0 / 6.0).abs().maxCoeff(), 1e-15);
  Vector dom = Vector::Zero(3);
  dom[1] = 100.0;
  EXPECT_EQ(softmax(dom)[1], 1.0);
  EXPECT_LT(softmax(dom)[0], 1e-40);
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const Vector z = testutil::random_vector(rng, 1 + static_cast<Eigen::Index>(rng.below(30)), 50.0);
    const Vector p = softmax(z);
    EXPECT_NEAR(p.sum(), 1.0, 1e-9);
    EXPECT_TRUE((p.array() >= 0.0).all());
    const Vector shifted = softmax((z.array() + 1234.5).matrix());
    EXPECT_LT((shifted - p).cwiseAbs().maxCoeff(), 1e-12);
  }
  Vector huge(2);
  huge << 1e308, -1e308;
  EXPECT_TRUE(softmax(huge).allFinite());
}

TEST(Argmax, LowestIndexOnTies) {
  Vector v(4);
  v << 0.1, 0.4, 0.4, 0.1;
  EXPECT_EQ(argmax(v), 1);
  EXPECT_EQ(argmax(Vector::Constant(5, 0.2)), 0);
}

namespace {

Model tiny_model(const std::vector<std::vector<std::string>>& membership, std::uint64_t seed = 5) {
  std::vector<std::string> cats;
  std::vector<std::string> diseases;
  for (std::size_t c = 0; c < membership.size(); ++c) {
    cats.push_back("c" + std::to_string(c));
    for (const auto& d : membership[c])
      if (std::find(diseases.begin(), diseases.end(), d) == diseases.end()) diseases.push_back(d);
  }
  Taxonomy tax(cats, diseases, membership);
  Dataset train(1);
  train[0].text(TextField::symptom) = "cough fever";
  train[0].category = cats[0];
  train[0].disease = membership[0][0];
  train[0].value(ContinuousFeature::age) = 40;
  train[0].value(ContinuousFeature::height) = 170;
  train[0].value(ContinuousFeature::weight) = 60;
  train[0].value(ContinuousFeature::duration) = 3;
  return make_model(testutil::small_config(seed), tax, train);
}

PatientRecord query() {
  PatientRecord r;
  r.text(TextField::symptom) = "fever";
  r.value(ContinuousFeature::age) = 30;
  r.gender = Gender::male;
  return r;
}

}  // namespace

TEST(PredictDisease, SingletonSubsetIsCertain) {
  const auto m = tiny_model({{"a"}, {"b", "c"}});
  const auto e = encode_record(m, query(), false);
  const Vector concat = encode_inputs(m.params, e, m.config, false);
  const auto q = predict_disease(concat, 0, m.params);
  ASSERT_EQ(q.size(), 1);
  EXPECT_EQ(q[0], 1.0);
  EXPECT_THROW(predict_disease(concat, 2, m.params), std::out_of_range);
}

TEST(PredictDisease, ZeroHeadGivesUniform) {
  std::vector<std::string> many;
  for (int i = 0; i < 29; ++i) many.push_back("d" + std::to_string(i));
  auto m = tiny_model({many});
  m.params.heads[0].disease_w.setZero();
  m.params.heads[0].disease_b.setZero();
  const auto e = encode_record(m, query(), false);
  const auto q = predict_disease(encode_inputs(m.params, e, m.config, false), 0, m.params);
  EXPECT_LT((q.array() - 1.0 / 29.0).abs().maxCoeff(), 1e-15);
}

TEST(PredictFull, MatchesStepByStepComposition) {
  const auto m = tiny_model({{"a", "b"}, {"b", "c", "d"}, {"e"}});
  const auto r = query();
  const auto pred = predict_full(m, r);

  const auto& p = m.params;
  const Vector text = encode_text(r, m.vocabulary, p.token_table, m.config.max_len);
  const Vector data = encode_demographics(r, m.normalizer, p.features, p.attention);
  const Vector fused = fuse_embeddings(data, text, p.fuse_w, p.fuse_b);
  const Vector cat = predict_category(fused, p.category_w, p.category_b);
  EXPECT_LT((pred.category_probs - cat).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(pred.selected_category, static_cast<std::size_t>(argmax(cat)));

  const auto& h = p.heads[pred.selected_category];
  const Vector fused2 = fuse_embeddings(data, text, h.fuse_w, h.fuse_b);
  const Vector dis = softmax(head_logits(fused2, h.disease_w, h.disease_b));
  EXPECT_LT((pred.disease_probs - dis).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(static_cast<std::size_t>(pred.disease_probs.size()), m.taxonomy.members(pred.selected_category).size());
  EXPECT_NEAR(pred.composite_scores.sum(), 1.0, 1e-12);
}

TEST(PredictFull, CompositeOfSharedDisease) {
  auto m = tiny_model({{"x", "s"}, {"s", "y"}});
  // Force known tier-1 and tier-2 distributions through the biases.
  m.params.category_w.setZero();
  m.params.category_b << std::log(0.3), std::log(0.7);
  for (auto& h : m.params.heads) h.disease_w.setZero();
  m.params.heads[0].disease_b << std::log(0.4), std::log(0.6);
  m.params.heads[1].disease_b << std::log(0.9), std::log(0.1);
  const auto pred = predict_full(m, query());
  const auto s = *m.taxonomy.disease_index("s");
  const auto x = *m.taxonomy.disease_index("x");
  const auto y = *m.taxonomy.disease_index("y");
  EXPECT_NEAR(pred.composite_scores[static_cast<Eigen::Index>(s)], 0.3 * 0.6 + 0.7 * 0.9, 1e-12);
  EXPECT_NEAR(pred.composite_scores[static_cast<Eigen::Index>(x)], 0.3 * 0.4, 1e-12);
  EXPECT_NEAR(pred.composite_scores[static_cast<Eigen::Index>(y)], 0.7 * 0.1, 1e-12);
  EXPECT_EQ(pred.selected_category, 1u);
}

TEST(PredictFull, DeterministicAndWellFormed) {
  const auto data = testutil::small_synthetic(15, 9);
  const auto m = make_model(testutil::small_config(), data.taxonomy, data.dataset);
  EXPECT_EQ(m.params.heads.size(), data.taxonomy.category_count());
  for (std::size_t c = 0; c < m.params.heads.size(); ++c)
    EXPECT_EQ(static_cast<std::size_t>(m.params.heads[c].disease_w.cols()), data.taxonomy.members(c).size());
  for (const auto& r : data.dataset) {
    const auto a = predict_full(m, r);
    const auto b = predict_full(m, r);
    EXPECT_EQ(a, b);
    EXPECT_NEAR(a.category_probs.sum(), 1.0, 1e-9);
    EXPECT_NEAR(a.disease_probs.sum(), 1.0, 1e-9);
    EXPECT_NEAR(a.composite_scores.sum(), 1.0, 1e-9);
  }
}

TEST(PredictFull, TextOnlyIgnoresDemographics) {
  const auto data = testutil::small_synthetic(15, 10);
  const auto m = make_model(testutil::small_config(), data.taxonomy, data.dataset);
  auto a = data.dataset[0];
  auto b = a;
  b.gender = a.gender == Gender::male ? Gender::female : Gender::male;
  b.value(ContinuousFeature::age) = 88;
  EXPECT_EQ(predict_full(m, a, true), predict_full(m, b, true));
  EXPECT_FALSE(predict_full(m, a, false) == predict_full(m, b, false));
}
