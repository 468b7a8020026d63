#pragma once

#include "pomp/model.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pomp {

// Layout: 8-byte magic, u32 LE header length, UTF-8 JSON header, then every
// tensor as LE float64 in manifest order.
inline constexpr std::string_view kCheckpointMagic = "POMPMDL1";
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

inline void put_f64(std::string& out, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double get_f64(std::string_view in, std::size_t pos) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::string serialize_model(const Model& model) {
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  model.params.visit([&](const std::string& name, const Matrix& m) {
    manifest.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}});
    offset += static_cast<std::size_t>(m.size()) * sizeof(double);
  });
  const auto& cfg = model.config;
  nlohmann::json header = {{"format_version", kCheckpointVersion},
                           {"dims",
                            {{"d_text", cfg.d_text},
                             {"d_model", cfg.d_model},
                             {"d_fuse", cfg.d_fuse},
                             {"heads", cfg.heads},
                             {"max_len", cfg.max_len},
                             {"vocab_size", model.vocabulary.size()}}},
                           {"tensors", manifest},
                           {"taxonomy", model.taxonomy.to_json()},
                           {"vocabulary", model.vocabulary.to_json()},
                           {"normalizer", model.normalizer.to_json()},
                           {"config", cfg.to_json()}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + offset);
  model.params.visit([&](const std::string&, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) detail::put_f64(out, m.data()[i]);
  });
  return out;
}

inline Model deserialize_model(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
    throw CheckpointError("not a checkpoint: bad magic bytes");
  if (bytes.size() < kCheckpointMagic.size() + 4) throw CheckpointError("truncated checkpoint: missing header length");
  const std::size_t header_len = detail::get_u32(bytes, kCheckpointMagic.size());
  const std::size_t data_start = kCheckpointMagic.size() + 4 + header_len;
  if (bytes.size() < data_start) throw CheckpointError("truncated checkpoint: header extends past end of file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kCheckpointMagic.size() + 4, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("format_version") || !header["format_version"].is_number_integer())
    throw CheckpointError("checkpoint header has no format_version");
  const int version = header["format_version"].get<int>();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint format version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");

  Model model;
  try {
    model.config = TrainingConfig::from_json(header.at("config"));
    model.taxonomy = Taxonomy::from_json(header.at("taxonomy"));
    model.vocabulary = Vocabulary::from_json(header.at("vocabulary"));
    model.normalizer = ContinuousNormalizer::from_json(header.at("normalizer"));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  model.params = init_params(model.config, model.taxonomy, model.vocabulary.size());

  const auto& manifest = header.at("tensors");
  std::size_t index = 0;
  model.params.visit([&](const std::string& name, Matrix& m) {
    if (index >= manifest.size()) throw CheckpointError("checkpoint manifest is missing tensor '" + name + "'");
    const auto& entry = manifest[index++];
    const auto shape = entry.at("shape").get<std::vector<long long>>();
    if (entry.at("name").get<std::string>() != name || shape.size() != 2 || shape[0] != m.rows() ||
        shape[1] != m.cols())
      throw CheckpointError("checkpoint tensor '" + name + "' does not match the model layout");
    const std::size_t off = data_start + entry.at("offset").get<std::size_t>();
    const std::size_t len = static_cast<std::size_t>(m.size()) * sizeof(double);
    if (off + len > bytes.size()) throw CheckpointError("truncated checkpoint: tensor '" + name + "' incomplete");
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = detail::get_f64(bytes, off + static_cast<std::size_t>(i) * sizeof(double));
    }
  });
  if (index != manifest.size()) throw CheckpointError("checkpoint manifest lists unexpected tensors");
  return model;
}

inline void save_model(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path);
  const auto bytes = serialize_model(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint: " + path);
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Model load_model(const std::string& path) {
  try {
    return deserialize_model(read_file_bytes(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path + ": " + e.what());
  }
}

// "<format version>-<FNV-1a of the serialized checkpoint>".
inline std::string model_version(const Model& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize_model(model)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << kCheckpointVersion << '-' << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace pomp
