// Command-line entry point: generate, train, eval, predict, serve, stats.

#include "pomp/pomp.hpp"
#include "pomp/service.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string sibling_taxonomy(const std::string& data_path) {
  return (fs::path(data_path).parent_path() / "taxonomy.json").string();
}

std::string with_suffix(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

std::string resolve_model_path(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("POMP_MODEL")) return env;
  throw std::runtime_error("no model given: pass --model or set POMP_MODEL");
}

struct GenerateArgs {
  std::uint64_t seed = 1;
  std::string out;
  std::string taxonomy_out;
  std::string preset = "haodf";
  std::size_t categories = 0;
  std::size_t diseases = 0;
  std::size_t records = 0;
  std::optional<double> overlap;
  bool demographic = false;
  std::optional<std::size_t> vocab_size;
  std::optional<std::size_t> tokens_per_field;
  std::size_t embedding_dim = 0;
  bool split = false;
};

int run_generate(const GenerateArgs& a) {
  pomp::SyntheticSpec spec = a.preset == "haodf" ? pomp::SyntheticSpec::haodf_shaped(a.seed)
                                                 : pomp::SyntheticSpec::uniform(6, 5, 500, a.seed);
  if (a.categories > 0 || a.diseases > 0 || a.records > 0) {
    spec = pomp::SyntheticSpec::uniform(a.categories > 0 ? a.categories : 6, a.diseases > 0 ? a.diseases : 5,
                                        a.records > 0 ? a.records : 500, a.seed);
  }
  if (a.overlap) spec.overlap = *a.overlap;
  spec.demographic_dependence = a.demographic;
  if (a.vocab_size) spec.vocab_size = *a.vocab_size;
  if (a.tokens_per_field) spec.tokens_per_field = *a.tokens_per_field;
  spec.embedding_dim = a.embedding_dim;

  const auto data = pomp::generate_synthetic(spec);
  pomp::save_dataset(data.dataset, a.out);
  pomp::save_taxonomy(data.taxonomy, a.taxonomy_out.empty() ? sibling_taxonomy(a.out) : a.taxonomy_out);
  if (a.split) {
    const auto parts = pomp::split_dataset(data.dataset, {}, a.seed);
    for (const auto& w : parts.warnings) std::cerr << "warning: " << w << '\n';
    pomp::save_dataset(parts.train, with_suffix(a.out, ".train.jsonl"));
    pomp::save_dataset(parts.val, with_suffix(a.out, ".val.jsonl"));
    pomp::save_dataset(parts.test, with_suffix(a.out, ".test.jsonl"));
  }
  std::cerr << "wrote " << data.dataset.size() << " records to " << a.out << '\n';
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string val;
  std::string taxonomy;
  std::string out;
  std::string history;
};

int run_train(const TrainArgs& a) {
  pomp::TrainingConfig cfg;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw std::runtime_error("cannot open config file: " + a.config);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(a.config + ": " + e.what());
    }
    cfg = pomp::TrainingConfig::from_json(j);
  }
  const auto taxonomy = pomp::load_taxonomy(a.taxonomy.empty() ? sibling_taxonomy(a.data) : a.taxonomy);
  const std::size_t dim = cfg.backend == pomp::TextBackend::precomputed ? cfg.d_text : 0;
  auto train_set = pomp::load_dataset(a.data, taxonomy, dim);
  pomp::Dataset val_set;
  if (!a.val.empty()) {
    val_set = pomp::load_dataset(a.val, taxonomy, dim);
  } else {
    auto parts = pomp::split_dataset(train_set, {0.9, 0.1, 0.0}, cfg.seed);
    for (const auto& w : parts.warnings) std::cerr << "warning: " << w << '\n';
    train_set = std::move(parts.train);
    val_set = std::move(parts.val);
  }
  auto result = pomp::train(train_set, val_set, taxonomy, cfg, [](const pomp::EpochRecord& e) {
    std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " val category@1 " << e.val_category_hit_at_1
              << " val disease@1 " << e.val_disease_hit_at_1 << '\n';
  });
  pomp::save_model(result.model, a.out);
  write_json(result.history_json(), a.history.empty() ? a.out + ".history.json" : a.history);
  std::cerr << "best epoch " << result.best_epoch << ", checkpoint written to " << a.out << '\n';
  return 0;
}

int run_eval(const std::string& model_flag, const std::string& data, const std::string& mode,
             const std::string& out) {
  const auto model = pomp::load_model(resolve_model_path(model_flag));
  const std::size_t dim = model.config.backend == pomp::TextBackend::precomputed ? model.config.d_text : 0;
  const auto test = pomp::load_dataset(data, model.taxonomy, dim);
  pomp::EvalMode m = model.config.text_only ? pomp::EvalMode::text_only : pomp::EvalMode::full;
  if (mode == "full") m = pomp::EvalMode::full;
  if (mode == "text_only") m = pomp::EvalMode::text_only;
  const auto report = pomp::evaluate(model, test, m);
  if (out.empty()) {
    std::cerr << report.to_table();
    std::cout << report.to_json().dump(2) << '\n';
  } else {
    write_json(report.to_json(), out);
    std::cout << report.to_table();
  }
  return 0;
}

int run_predict(const std::string& model_flag, const std::string& input, std::optional<std::size_t> top_c,
                std::optional<std::size_t> top_d) {
  pomp::PredictionService service(pomp::load_model(resolve_model_path(model_flag)));
  std::string body;
  if (input == "-") {
    body.assign(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>());
  } else {
    std::ifstream in(input);
    if (!in) throw std::runtime_error("cannot open input file: " + input);
    body.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  if (top_c || top_d) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_object()) {
      if (top_c) j["top_k_categories"] = *top_c;
      if (top_d) j["top_k_diseases"] = *top_d;
      body = j.dump();
    }
  }
  auto [status, response] = service.handle_predict(body);
  if (status != 200) {
    std::cerr << "error: " << response.value("error", std::string("invalid request")) << '\n';
    return 1;
  }
  std::cout << response.dump(2) << '\n';
  return 0;
}

int run_serve(const std::string& model_flag, const std::string& host, int port, bool cors) {
  const auto path = resolve_model_path(model_flag);
  pomp::PredictionService service(pomp::load_model(path));
  httplib::Server server;
  pomp::configure_routes(server, service, cors);
  std::cerr << "serving " << path << " (model " << service.version() << ") on http://" << host << ':' << port << '\n';
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

int run_stats(const std::string& data, const std::string& taxonomy_flag, bool json) {
  const auto taxonomy = pomp::load_taxonomy(taxonomy_flag.empty() ? sibling_taxonomy(data) : taxonomy_flag);
  const auto ds = pomp::load_dataset(data, taxonomy);
  const auto stats = pomp::dataset_stats(ds);
  if (json) {
    std::cout << stats.to_json().dump(2) << '\n';
  } else {
    std::cout << stats.to_text();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-tier disease prediction from patient narratives"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset (JSONL) and its taxonomy (JSON)");
  generate->add_option("--seed", gen.seed, "Generator seed");
  generate->add_option("--out", gen.out, "Dataset output path")->required();
  generate->add_option("--taxonomy-out", gen.taxonomy_out, "Taxonomy output path (default: taxonomy.json beside --out)");
  generate->add_option("--preset", gen.preset, "Shape preset")->check(CLI::IsMember({"haodf", "small"}));
  generate->add_option("--categories", gen.categories, "Category count (uniform shape)");
  generate->add_option("--diseases", gen.diseases, "Diseases per category (uniform shape)");
  generate->add_option("--records", gen.records, "Records per category (uniform shape)");
  generate->add_option("--overlap", gen.overlap, "Fraction of diseases shared by adjacent categories");
  generate->add_flag("--demographic", gen.demographic, "Make disease labels depend on age");
  generate->add_option("--vocab-size", gen.vocab_size, "Filler vocabulary size");
  generate->add_option("--tokens-per-field", gen.tokens_per_field, "Filler tokens per text field");
  generate->add_option("--embedding-dim", gen.embedding_dim, "Attach precomputed text embeddings of this length");
  generate->add_flag("--split", gen.split, "Also write 80/10/10 .train/.val/.test files");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train->add_option("--config", tr.config, "Training config JSON");
  train->add_option("--data", tr.data, "Training dataset (JSONL)")->required();
  train->add_option("--val", tr.val, "Validation dataset (default: 10% of --data)");
  train->add_option("--taxonomy", tr.taxonomy, "Taxonomy JSON (default: taxonomy.json beside --data)");
  train->add_option("--out", tr.out, "Checkpoint output path")->required();
  train->add_option("--history", tr.history, "History JSON path (default: <out>.history.json)");

  std::string model_path, data_path, mode, out_path, taxonomy_path, input = "-", host = "127.0.0.1";
  int port = 8080;
  bool cors = false, json = false;
  std::optional<std::size_t> top_c, top_d;

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a labeled dataset");
  eval->add_option("--model", model_path, "Checkpoint path (or POMP_MODEL)");
  eval->add_option("--data", data_path, "Test dataset (JSONL)")->required();
  eval->add_option("--mode", mode, "full or text_only (default: the model's training mode)")
      ->check(CLI::IsMember({"full", "text_only"}));
  eval->add_option("--out", out_path, "Metrics JSON output path");

  auto* predict = app.add_subcommand("predict", "Predict for one JSON record from a file or standard input");
  predict->add_option("--model", model_path, "Checkpoint path (or POMP_MODEL)");
  predict->add_option("--input", input, "Record JSON file, '-' for standard input");
  predict->add_option("--top-k-categories", top_c, "Categories to list");
  predict->add_option("--top-k-diseases", top_d, "Diseases to list");

  auto* serve = app.add_subcommand("serve", "Run the HTTP prediction service");
  serve->add_option("--model", model_path, "Checkpoint path (or POMP_MODEL)");
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--port", port, "Listen port");
  serve->add_flag("--cors", cors, "Send permissive cross-origin headers");

  auto* stats = app.add_subcommand("stats", "Print dataset statistics");
  stats->add_option("--data", data_path, "Dataset (JSONL)")->required();
  stats->add_option("--taxonomy", taxonomy_path, "Taxonomy JSON (default: taxonomy.json beside --data)");
  stats->add_flag("--json", json, "Emit JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate) return run_generate(gen);
    if (*train) return run_train(tr);
    if (*eval) return run_eval(model_path, data_path, mode, out_path);
    if (*predict) return run_predict(model_path, input, top_c, top_d);
    if (*serve) return run_serve(model_path, host, port, cors);
    if (*stats) return run_stats(data_path, taxonomy_path, json);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
