#include "test_util.hpp"

#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

using namespace pomp;

namespace {

Taxonomy tiny_taxonomy() {
  return Taxonomy({"cold", "flu"}, {"rhinitis", "influenza_a", "bronchitis"},
                  {{"rhinitis", "bronchitis"}, {"influenza_a", "bronchitis"}});
}

std::string line(const std::string& category, const std::string& disease, const std::string& age = "30") {
  return R"({"chronic":"","surgery":"","therapy":"","usage":"","symptom":"runny nose","allergy":"","age":)" + age +
         R"(,"height":170,"weight":60,"duration":3,"gender":"female","pregnancy":"not_pregnant","category":")" +
         category + R"(","disease":")" + disease + "\"}";
}

}  // namespace

TEST(Taxonomy, IndexesAndOverlap) {
  const auto t = tiny_taxonomy();
  EXPECT_EQ(t.category_count(), 2u);
  EXPECT_EQ(t.disease_count(), 3u);
  EXPECT_EQ(t.label_count_per_head(), (std::vector<std::size_t>{2, 2}));
  EXPECT_EQ(*t.local_index(1, *t.disease_index("bronchitis")), 1u);
  EXPECT_FALSE(t.local_index(0, *t.disease_index("influenza_a")));
  EXPECT_EQ(Taxonomy::from_json(t.to_json()), t);
}

TEST(Taxonomy, RejectsUncoveredAndUnknownDiseases) {
  EXPECT_THROW(Taxonomy({"a"}, {"x", "y"}, {{"x"}}), DataError);
  EXPECT_THROW(Taxonomy({"a"}, {"x"}, {{"z"}}), DataError);
  EXPECT_THROW(Taxonomy({"a", "a"}, {"x"}, {{"x"}, {"x"}}), DataError);
}

TEST(LoadDataset, ThreeWellFormedLines) {
  std::istringstream in(line("cold", "rhinitis") + "\n" + line("flu", "influenza_a") + "\n" +
                        line("flu", "bronchitis") + "\n");
  const auto ds = parse_dataset(in, tiny_taxonomy(), "mem");
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds[1].disease, "influenza_a");
  EXPECT_EQ(ds[0].text(TextField::symptom), "runny nose");
  EXPECT_DOUBLE_EQ(*ds[2].value(ContinuousFeature::height), 170.0);
}

TEST(LoadDataset, DiseaseOutsideCategoryIsRejectedWithLineNumber) {
  std::istringstream in(line("cold", "rhinitis") + "\n" + line("cold", "influenza_a") + "\n");
  try {
    parse_dataset(in, tiny_taxonomy(), "mem");
    FAIL() << "expected rejection";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("mem:2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("influenza_a"), std::string::npos) << msg;
  }
}

TEST(LoadDataset, NegativeAgeIsAValidationError) {
  std::istringstream in(line("cold", "rhinitis", "-1") + "\n");
  EXPECT_THROW(parse_dataset(in, tiny_taxonomy(), "mem"), DataError);
}

TEST(LoadDataset, MalformedLineNamesLineNumber) {
  std::istringstream in(line("cold", "rhinitis") + "\n{not json\n");
  try {
    parse_dataset(in, tiny_taxonomy(), "mem");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("mem:2"), std::string::npos);
  }
}

TEST(LoadDataset, UnknownCategoryNamesLabel) {
  std::istringstream in(line("measles", "rhinitis") + "\n");
  try {
    parse_dataset(in, tiny_taxonomy(), "mem");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("measles"), std::string::npos);
  }
}

TEST(LoadDataset, NullContinuousIsMissingAndEmbeddingLengthChecked) {
  auto text = line("cold", "rhinitis", "null");
  std::istringstream in(text + "\n");
  const auto ds = parse_dataset(in, tiny_taxonomy(), "mem");
  EXPECT_FALSE(ds[0].value(ContinuousFeature::age).has_value());

  auto j = nlohmann::json::parse(line("cold", "rhinitis"));
  j["text_embedding"] = {0.1, 0.2};
  std::istringstream in2(j.dump() + "\n");
  EXPECT_THROW(parse_dataset(in2, tiny_taxonomy(), "mem", 3), DataError);
}

TEST(LoadDataset, SerializeRoundTripIsFieldForField) {
  auto data = testutil::small_synthetic(15, 9, true, 4);
  data.dataset[0].value(ContinuousFeature::weight).reset();
  data.dataset[1].text(TextField::symptom) = "咳嗽 三天, Fièvre!";
  std::stringstream buf;
  write_dataset(buf, data.dataset);
  const auto back = parse_dataset(buf, data.taxonomy, "mem", 4);
  ASSERT_EQ(back.size(), data.dataset.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(back[i], data.dataset[i]) << "record " << i;
}

TEST(SplitDataset, DeterministicForSeed) {
  const auto data = testutil::small_synthetic(34);  // 102 records over 3 categories
  const Dataset ds(data.dataset.begin(), data.dataset.begin() + 100);
  const auto a = split_dataset(ds, {0.8, 0.1, 0.1}, 7);
  const auto b = split_dataset(ds, {0.8, 0.1, 0.1}, 7);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);
  const auto c = split_dataset(ds, {0.8, 0.1, 0.1}, 8);
  EXPECT_NE(a.train, c.train);
}

TEST(SplitDataset, RatiosMustSumToOne) {
  const auto data = testutil::small_synthetic(5);
  EXPECT_THROW(split_dataset(data.dataset, {0.5, 0.5, 0.1}, 1), DataError);
}

TEST(SplitDataset, EveryCategoryInEverySplit) {
  const auto data = generate_synthetic(SyntheticSpec::uniform(6, 3, 10, 4));
  ASSERT_EQ(data.dataset.size(), 60u);
  const auto s = split_dataset(data.dataset, {0.5, 0.25, 0.25}, 3);
  for (const Dataset* part : {&s.train, &s.val, &s.test}) {
    std::map<std::string, int> histogram;
    for (const auto& r : *part) ++histogram[r.category];
    EXPECT_EQ(histogram.size(), 6u);
    for (const auto& [cat, n] : histogram) EXPECT_GE(n, 2) << cat;
  }
  EXPECT_TRUE(s.warnings.empty());
}

TEST(SplitDataset, DisjointPartitionOfInputMultiset) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto data = testutil::small_synthetic(3 + seed, seed);
    const auto s = split_dataset(data.dataset, {0.7, 0.2, 0.1}, seed);
    std::multiset<std::string> in, out;
    for (const auto& r : data.dataset) in.insert(record_to_json(r).dump());
    for (const Dataset* part : {&s.train, &s.val, &s.test})
      for (const auto& r : *part) out.insert(record_to_json(r).dump());
    EXPECT_EQ(in, out) << "seed " << seed;
  }
}

TEST(SplitDataset, SmallCategoryGoesToTrainWithWarning) {
  const auto data = generate_synthetic(SyntheticSpec::uniform(2, 2, 2, 4));
  const auto s = split_dataset(data.dataset, {0.8, 0.1, 0.1}, 1);
  EXPECT_EQ(s.train.size(), 4u);
  EXPECT_EQ(s.warnings.size(), 2u);
}

TEST(Normalizer, ScaleIsTrainingMaximum) {
  Dataset ds(3);
  const double ages[] = {25, 50, 100};
  for (int i = 0; i < 3; ++i) {
    ds[i].value(ContinuousFeature::age) = ages[i];
    ds[i].value(ContinuousFeature::duration) = 0.0;
  }
  ds[0].value(ContinuousFeature::height) = 150.0;
  ds[1].value(ContinuousFeature::height) = 180.0;
  const auto n = fit_normalizer(ds, 1e-9);
  EXPECT_DOUBLE_EQ(n.scale[0], 100.0);
  EXPECT_DOUBLE_EQ(n.apply(ds[0].continuous)[0], 0.25);
  EXPECT_DOUBLE_EQ(n.scale[3], 1e-9);
  for (const auto& r : ds) EXPECT_DOUBLE_EQ(n.apply(r.continuous)[3], 0.0);
  EXPECT_NEAR(n.apply(ds[0].continuous)[1], 150.0 / 180.0, 1e-15);
  EXPECT_DOUBLE_EQ(n.apply(ds[1].continuous)[1], 1.0);
  // Missing height imputed with the training mean (165) before scaling.
  EXPECT_NEAR(n.apply(ds[2].continuous)[1], 165.0 / 180.0, 1e-15);
}

TEST(Normalizer, TrainingValuesLandInUnitInterval) {
  const auto data = testutil::small_synthetic(40, 21);
  const auto split = split_dataset(data.dataset, {}, 2);
  const auto n = fit_normalizer(split.train);
  for (const auto& r : split.train) {
    for (double v : n.apply(r.continuous)) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_THROW(fit_normalizer({}), DataError);
}

TEST(Synthetic, DeterministicBytes) {
  auto spec = SyntheticSpec::uniform(4, 3, 25, 1);
  spec.embedding_dim = 5;
  std::ostringstream a, b;
  write_dataset(a, generate_synthetic(spec).dataset);
  write_dataset(b, generate_synthetic(spec).dataset);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Synthetic, HaodfShapeWithOverlapHasFewerThan248Diseases) {
  const auto spec = SyntheticSpec::haodf_shaped(1);
  const auto data = generate_synthetic(spec);
  std::size_t slots = 0;
  for (auto n : data.taxonomy.label_count_per_head()) slots += n;
  EXPECT_EQ(slots, 248u);
  EXPECT_LT(data.taxonomy.disease_count(), 248u);
  const auto stats = dataset_stats(data.dataset);
  // Sum of the per-category counts.
  EXPECT_EQ(stats.record_count, 30739u);
  for (std::size_t c = 0; c < 6; ++c)
    EXPECT_EQ(stats.records_per_category.at(data.taxonomy.categories()[c]), spec.records_per_category[c]);
}

TEST(Synthetic, OracleReproducesStoredLabels) {
  for (bool demographic : {false, true}) {
    auto spec = SyntheticSpec::uniform(5, 4, 60, 17);
    spec.overlap = 0.5;
    spec.demographic_dependence = demographic;
    const auto data = generate_synthetic(spec);
    EXPECT_DOUBLE_EQ(data.oracle.accuracy(data.dataset), 1.0);
  }
}

TEST(Synthetic, IdenticalTextsDifferentDiseaseDueToAge) {
  auto spec = SyntheticSpec::uniform(2, 3, 200, 5);
  spec.demographic_dependence = true;
  spec.vocab_size = 1;
  spec.tokens_per_field = 1;
  const auto data = generate_synthetic(spec);
  bool found = false;
  for (std::size_t i = 0; i < data.dataset.size() && !found; ++i) {
    for (std::size_t j = i + 1; j < data.dataset.size() && !found; ++j) {
      const auto& a = data.dataset[i];
      const auto& b = data.dataset[j];
      if (a.texts != b.texts || a.disease == b.disease) continue;
      const bool a_old = *a.value(ContinuousFeature::age) >= spec.age_threshold;
      const bool b_old = *b.value(ContinuousFeature::age) >= spec.age_threshold;
      found = a_old != b_old;
    }
  }
  EXPECT_TRUE(found);
}

TEST(Synthetic, RejectsInvalidSpec) {
  auto spec = SyntheticSpec::uniform(2, 2, 2);
  spec.overlap = 1.0;
  EXPECT_THROW(generate_synthetic(spec), DataError);
  spec = SyntheticSpec::uniform(2, 0, 2);
  EXPECT_THROW(generate_synthetic(spec), DataError);
}

TEST(Stats, TokenAverages) {
  EXPECT_EQ(dataset_stats({}).record_count, 0u);

  PatientRecord r;
  r.text(TextField::symptom) = "one two three four five";
  r.text(TextField::usage) = "six, seven; eight nine ten";
  EXPECT_DOUBLE_EQ(dataset_stats({r}).avg_tokens_per_patient, 10.0);

  const auto data = testutil::small_synthetic(12, 8);
  std::size_t total = 0;
  for (const auto& rec : data.dataset) {
    for (const auto& t : rec.texts) {
      std::istringstream words(t);
      std::string w;
      while (words >> w) ++total;  // synthetic text is space-separated words
    }
  }
  EXPECT_DOUBLE_EQ(dataset_stats(data.dataset).avg_tokens_per_patient,
                   static_cast<double>(total) / static_cast<double>(data.dataset.size()));
}

TEST(Tokenizer, UnicodeAwareSplitting) {
  EXPECT_EQ(split_tokens("Persistent COUGH, fever."), (std::vector<std::string>{"persistent", "cough", "fever"}));
  EXPECT_EQ(split_tokens("咳嗽三天"), (std::vector<std::string>{"咳", "嗽", "三", "天"}));
  EXPECT_EQ(split_tokens("ÉTÉ，Кашель"), (std::vector<std::string>{"été", "кашель"}));
  EXPECT_TRUE(split_tokens("  ...  ").empty());
}

TEST(Vocabulary, JsonRoundTripAndReservedIds) {
  Vocabulary v;
  v.add("fever");
  v.add("cough");
  v.freeze();
  EXPECT_THROW(v.add("x"), std::logic_error);
  const auto back = Vocabulary::from_json(v.to_json());
  EXPECT_EQ(back.id("cough"), 3);
  EXPECT_EQ(back.id("nope"), Vocabulary::kUnknown);
  EXPECT_THROW(Vocabulary::from_json(nlohmann::json{{"a", 0}, {"b", 1}}), std::runtime_error);
}
