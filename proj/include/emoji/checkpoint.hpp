#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "emoji/csv.hpp"
#include "emoji/errors.hpp"
#include "emoji/io.hpp"
#include "emoji/model.hpp"
#include "emoji/tokenizer.hpp"

namespace emoji {

inline constexpr std::string_view kCheckpointMagic = "EMJB";
inline constexpr std::uint8_t kCheckpointVersion = 0x01;

struct LoadedCheckpoint {
  Model<float> model;
  std::string vocab_sha256;
  nlohmann::json extra;  // pipeline settings stored next to the model config

  /// Refuses a vocabulary whose hash or size differs from the one trained with.
  void require_vocab(const Vocabulary& vocab) const {
    if (vocab.sha256() != vocab_sha256)
      throw DataError("vocabulary hash mismatch: checkpoint expects " + vocab_sha256 + ", got " + vocab.sha256());
    if (vocab.size() != model.config().vocab_size)
      throw DataError("vocabulary size " + std::to_string(vocab.size()) + " differs from checkpoint V=" +
                      std::to_string(model.config().vocab_size));
  }
};

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

inline std::uint64_t get_u64_le(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  return v;
}

inline void put_f32_le(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out += static_cast<char>((bits >> (8 * i)) & 0xFF);
}

inline float get_f32_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Model<float>& model, const std::string& vocab_sha256,
                                        const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto* p : model.parameters()) {
    const std::uint64_t len = 4 * p->value.size();
    manifest.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"dtype", "float32"},
                        {"byte_offset", offset}, {"byte_len", len}});
    offset += len;
  }
  nlohmann::json config = extra.is_object() ? extra : nlohmann::json::object();
  config["model"] = model.config().to_json();
  const nlohmann::json header{{"config", config}, {"vocab_sha256", vocab_sha256}, {"tensors", manifest}};
  const std::string header_text = header.dump();

  std::string out(kCheckpointMagic);
  out += static_cast<char>(kCheckpointVersion);
  detail::put_u64_le(out, header_text.size());
  out += header_text;
  out.reserve(out.size() + offset);
  for (const auto* p : model.parameters())
    for (float v : p->value.storage()) detail::put_f32_le(out, v);
  return out;
}

inline LoadedCheckpoint parse_checkpoint(std::string_view bytes, const std::string& origin = "checkpoint") {
  auto fail = [&](const std::string& why) -> void { throw DataError(origin + ": " + why); };
  constexpr std::size_t prefix = 4 + 1 + 8;
  if (bytes.size() < prefix) fail("truncated file (no header)");
  if (bytes.substr(0, 4) != kCheckpointMagic) fail("bad magic bytes");
  if (static_cast<std::uint8_t>(bytes[4]) != kCheckpointVersion)
    fail("unsupported version " + std::to_string(static_cast<unsigned>(static_cast<std::uint8_t>(bytes[4]))));
  const std::uint64_t header_len = detail::get_u64_le(bytes.substr(5, 8));
  if (header_len > bytes.size() - prefix) fail("truncated file (header length exceeds file size)");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(prefix, header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed header: ") + e.what());
  }
  const std::string_view data = bytes.substr(prefix + header_len);

  LoadedCheckpoint out;
  try {
    nlohmann::json config = header.at("config");
    const ModelConfig mc = ModelConfig::from_json(config.at("model"));
    out.model = Model<float>(mc);
    out.vocab_sha256 = header.at("vocab_sha256").get<std::string>();
    config.erase("model");
    out.extra = config;
    const auto& manifest = header.at("tensors");
    auto params = out.model.parameters();
    if (manifest.size() != params.size())
      fail("manifest lists " + std::to_string(manifest.size()) + " tensors, config implies " + std::to_string(params.size()));
    std::uint64_t expected_offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& entry = manifest[i];
      auto& p = *params[i];
      const auto name = entry.at("name").get<std::string>();
      if (name != p.name) fail("manifest entry " + std::to_string(i) + " is '" + name + "', expected '" + p.name + "'");
      if (entry.at("shape").get<numeric::Shape>() != p.value.shape()) fail("shape mismatch for " + name);
      if (entry.at("dtype").get<std::string>() != "float32") fail("unsupported dtype for " + name);
      const auto off = entry.at("byte_offset").get<std::uint64_t>();
      const auto len = entry.at("byte_len").get<std::uint64_t>();
      if (off != expected_offset) fail("offset inconsistency at " + name);
      if (len != 4 * p.value.size()) fail("byte length inconsistency at " + name);
      if (off + len > data.size()) fail("truncated file (tensor " + name + " incomplete)");
      const char* src = data.data() + off;
      for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] = detail::get_f32_le(src + 4 * k);
      expected_offset = off + len;
    }
    if (expected_offset != data.size()) fail("trailing bytes after the last tensor");
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed header: ") + e.what());
  } catch (const InputError& e) {
    fail(e.what());
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const Model<float>& model, const std::string& vocab_sha256,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  write_file_atomic(path, serialize_checkpoint(model, vocab_sha256, extra));
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) { return parse_checkpoint(csv::read_file(path), path); }

}  // namespace emoji
