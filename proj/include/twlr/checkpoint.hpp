#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "twlr/encoder.hpp"
#include "twlr/error.hpp"
#include "twlr/classifier.hpp"

namespace twlr {

inline constexpr const char* kCheckpointVersion = "twlr-ckpt-1";

// Layout:
//   "twlr-ckpt-1\n"
//   header length, 8 bytes little-endian
//   JSON header: version, encoder config, temperature, tensor table
//   payload: float64 little-endian, each tensor row-major at its offset
struct Checkpoint {
  EncoderParams params;
  Eigen::MatrixXd text;  // 9×D, grade rows then lesion rows
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline nlohmann::ordered_json config_json(const EncoderConfig& c) {
  return {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"dim", c.dim},
          {"layers", c.layers},         {"heads", c.heads},           {"ffn_dim", c.ffn_dim},
          {"temperature_init", c.temperature}};
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  using nlohmann::ordered_json;
  std::string payload;
  ordered_json tensors = ordered_json::array();
  auto add = [&](const std::string& name, const Mat& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", payload.size()}});
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) detail::put_u64(payload, std::bit_cast<std::uint64_t>(m(r, c)));
  };
  ck.params.visit(add);
  add("text", ck.text);

  ordered_json header;
  header["version"] = kCheckpointVersion;
  header["config"] = detail::config_json(ck.params.config);
  header["patch_size"] = ck.params.config.patch_size;
  header["dim"] = ck.params.config.dim;
  header["layers"] = ck.params.config.layers;
  header["temperature"] = ck.params.temperature();
  header["tensors"] = tensors;
  const std::string h = header.dump();

  std::string out = std::string(kCheckpointVersion) + "\n";
  detail::put_u64(out, h.size());
  out += h;
  out += payload;
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const std::string magic = std::string(kCheckpointVersion) + "\n";
  if (bytes.compare(0, magic.size(), magic) != 0) throw InvalidInput("checkpoint: bad magic or unsupported version");
  if (bytes.size() < magic.size() + 8) throw InvalidInput("checkpoint: truncated header");
  const auto* base = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t hlen = detail::get_u64(base + magic.size());
  const std::size_t hstart = magic.size() + 8;
  if (hlen > bytes.size() - hstart) throw InvalidInput("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(hstart, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("checkpoint: header is not valid JSON: ") + e.what());
  }
  if (header.value("version", "") != kCheckpointVersion) throw InvalidInput("checkpoint: version mismatch");
  const std::size_t pstart = hstart + hlen;
  const std::size_t plen = bytes.size() - pstart;

  std::map<std::string, nlohmann::json> table;
  for (const auto& t : header.at("tensors")) table[t.at("name").get<std::string>()] = t;

  auto load = [&](const std::string& name, Mat& m) {
    auto it = table.find(name);
    if (it == table.end()) throw InvalidInput("checkpoint: missing tensor " + name);
    const auto rows = it->second.at("rows").get<Eigen::Index>();
    const auto cols = it->second.at("cols").get<Eigen::Index>();
    const auto off = it->second.at("offset").get<std::size_t>();
    if (m.size() > 0 && (rows != m.rows() || cols != m.cols()))
      throw InvalidInput("checkpoint: tensor " + name + " has shape " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", expected " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()));
    if (off > plen || static_cast<std::size_t>(rows * cols) * 8 > plen - off)
      throw InvalidInput("checkpoint: tensor " + name + " runs past the payload");
    m.resize(rows, cols);
    const unsigned char* p = base + pstart + off;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c, p += 8) m(r, c) = std::bit_cast<double>(detail::get_u64(p));
  };

  Checkpoint ck;
  try {
    const auto& c = header.at("config");
    EncoderConfig cfg;
    cfg.image_size = c.at("image_size");
    cfg.patch_size = c.at("patch_size");
    cfg.dim = c.at("dim");
    cfg.layers = c.at("layers");
    cfg.heads = c.at("heads");
    cfg.ffn_dim = c.at("ffn_dim");
    cfg.temperature = c.at("temperature_init");
    cfg.validate();
    ck.params = init_encoder(cfg, 0);  // shapes only; every value is overwritten
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("checkpoint: bad config block: ") + e.what());
  }
  ck.params.visit(load);
  ck.text = Mat(kNumClasses, ck.params.config.dim);
  load("text", ck.text);
  if (!ck.params.all_finite()) throw InvalidInput("checkpoint: non-finite parameter values");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifact(path.string());
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace twlr
