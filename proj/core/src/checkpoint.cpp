#include "seqrec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "seqrec/error.hpp"

namespace seqrec {
namespace {

constexpr char kMagic[8] = {'S', 'E', 'Q', 'R', 'E', 'C', 'K', 'P'};

[[noreturn]] void fail(const std::string& message) {
  throw Error(ErrorCategory::kCheckpoint, message);
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& config) {
  return {
      {"hidden_size", config.hidden_size},
      {"num_blocks", config.num_blocks},
      {"num_heads", config.num_heads},
      {"dropout", config.dropout},
      {"max_seq_len", config.max_seq_len},
      {"item_count", config.item_count},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.hidden_size = j.at("hidden_size").get<int>();
  c.num_blocks = j.at("num_blocks").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.item_count = j.at("item_count").get<std::int32_t>();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Parameters& params,
                     const nlohmann::json& extra) {
  nlohmann::json meta;
  meta["format_version"] = kCheckpointVersion;
  meta["config"] = model_config_to_json(params.config);
  meta["architecture"] = {
      {"block", "pre_layernorm"},
      {"activation", "gelu_tanh"},
      {"ffn_multiplier", 4},
      {"positional", "learned"},
      {"output_projection", "tied_item_embedding"},
      {"layernorm_eps", 1e-5},
  };
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& t : params.layout.tensors()) {
    manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset * 4}});
  }
  meta["tensors"] = manifest;
  meta["extra"] = extra;
  const std::string doc = meta.dump();

  std::string blob;
  blob.reserve(16 + doc.size() + params.values.size() * 4);
  blob.append(kMagic, sizeof(kMagic));
  std::uint64_t n = doc.size();
  for (int b = 0; b < 8; ++b) blob.push_back(static_cast<char>((n >> (8 * b)) & 0xff));
  blob += doc;
  for (float v : params.values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCategory::kIo, "cannot write " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw Error(ErrorCategory::kIo, "short write to " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::kIo, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string bytes = buffer.str();

  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    fail(path.string() + ": not a seqrec checkpoint");
  }
  std::uint64_t n = 0;
  for (int b = 7; b >= 0; --b) n = (n << 8) | static_cast<unsigned char>(bytes[8 + b]);
  if (n > bytes.size() - 16) fail(path.string() + ": truncated metadata");

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(bytes.substr(16, n));
  } catch (const nlohmann::json::exception& e) {
    fail(path.string() + ": corrupt metadata (" + e.what() + ")");
  }
  if (meta.value("format_version", -1) != kCheckpointVersion) {
    fail(path.string() + ": unsupported checkpoint version");
  }

  ModelConfig config;
  try {
    config = model_config_from_json(meta.at("config"));
    config.validate();
  } catch (const nlohmann::json::exception& e) {
    fail(path.string() + ": bad model config (" + e.what() + ")");
  } catch (const Error& e) {
    fail(path.string() + ": bad model config (" + e.what() + ")");
  }
  Parameters params(config);

  const auto& manifest = meta.at("tensors");
  const auto& expected = params.layout.tensors();
  if (!manifest.is_array() || manifest.size() != expected.size()) {
    fail(path.string() + ": tensor manifest does not match model config");
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& entry = manifest[i];
    if (entry.at("name").get<std::string>() != expected[i].name ||
        entry.at("shape").get<std::vector<std::int64_t>>() != expected[i].shape ||
        entry.at("offset").get<std::size_t>() != expected[i].offset * 4) {
      fail(path.string() + ": tensor '" + expected[i].name + "' shape or offset mismatch");
    }
  }

  const std::size_t data_start = 16 + n;
  const std::size_t needed = params.values.size() * 4;
  if (bytes.size() - data_start != needed) {
    fail(path.string() + ": expected " + std::to_string(needed) + " tensor bytes, found " +
         std::to_string(bytes.size() - data_start));
  }
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 3; b >= 0; --b) {
      bits = (bits << 8) | static_cast<unsigned char>(bytes[data_start + i * 4 + b]);
    }
    params.values[i] = std::bit_cast<float>(bits);
  }
  return LoadedCheckpoint{std::move(params), meta.value("extra", nlohmann::json::object())};
}

}  // namespace seqrec
