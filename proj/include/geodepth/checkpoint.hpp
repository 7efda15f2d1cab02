#ifndef GEODEPTH_CHECKPOINT_HPP
#define GEODEPTH_CHECKPOINT_HPP

// Checkpoint file layout:
//   8 bytes   magic "GDCKPT\0\1"
//   u32 LE    format version
//   u64 LE    header length in bytes
//   header    UTF-8 JSON: model config, run config, seed, step, geotag flag,
//             tensor table {name, group, shape, offset (in floats)}
//   payload   float32 LE values, tensors back to back in table order

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geodepth/errors.hpp"
#include "geodepth/networks.hpp"
#include "geodepth/tensor.hpp"

namespace geodepth {

/// Parameters plus optimizer moments at a given step.
struct TrainingState {
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  ParamSet<float> params;
  ParamSet<float> first_moment;
  ParamSet<float> second_moment;

  static TrainingState fresh(const NetworkParams& init) {
    TrainingState s;
    s.seed = init.seed;
    s.params = init.tensors;
    s.first_moment = init.tensors.zeros_like();
    s.second_moment = init.tensors.zeros_like();
    return s;
  }
};

struct Checkpoint {
  ModelConfig model;
  TrainingState state;
  bool geotag_enabled = true;
  std::map<std::string, std::string> run_config;  // flat key/value echo
};

inline constexpr std::array<char, 8> kCheckpointMagic{'G', 'D', 'C', 'K', 'P', 'T', '\0', '\1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"depth",
           {{"widths", c.depth.widths},
            {"input_channels", c.depth.input_channels},
            {"scales", c.depth.scales},
            {"width", c.depth.width},
            {"height", c.depth.height}}},
          {"pose",
           {{"widths", c.pose.widths}, {"input_channels", c.pose.input_channels}, {"output_scale", c.pose.output_scale}}},
          {"min_depth", c.min_depth},
          {"max_depth", c.max_depth}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto& d = j.at("depth");
  c.depth.widths = d.at("widths").get<std::vector<int>>();
  c.depth.input_channels = d.at("input_channels").get<int>();
  c.depth.scales = d.at("scales").get<int>();
  c.depth.width = d.at("width").get<int>();
  c.depth.height = d.at("height").get<int>();
  const auto& p = j.at("pose");
  c.pose.widths = p.at("widths").get<std::vector<int>>();
  c.pose.input_channels = p.at("input_channels").get<int>();
  c.pose.output_scale = p.at("output_scale").get<double>();
  c.min_depth = j.at("min_depth").get<double>();
  c.max_depth = j.at("max_depth").get<double>();
  c.validate();
  return c;
}

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline const char* checkpoint_group_name(int g) {
  static const char* names[] = {"params", "adam_m", "adam_v"};
  return names[g];
}

}  // namespace detail

/// Writes to `path` via a temporary file and rename, so a crash never
/// leaves a truncated checkpoint behind.
inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const ParamSet<float>* groups[] = {&ck.state.params, &ck.state.first_moment, &ck.state.second_moment};
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (int g = 0; g < 3; ++g) {
    for (const auto& [name, t] : groups[g]->entries()) {
      const Shape s = t.shape();
      table.push_back({{"name", name},
                       {"group", detail::checkpoint_group_name(g)},
                       {"shape", {s.n, s.c, s.h, s.w}},
                       {"offset", offset}});
      offset += t.size();
    }
  }
  const nlohmann::json header{{"model", model_config_to_json(ck.model)},
                              {"run_config", ck.run_config},
                              {"seed", ck.state.seed},
                              {"step", ck.state.step},
                              {"geotag_enabled", ck.geotag_enabled},
                              {"float_count", offset},
                              {"tensors", table}};
  const std::string text = header.dump();

  std::string bytes(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_le<std::uint32_t>(bytes, kCheckpointVersion);
  detail::put_le<std::uint64_t>(bytes, text.size());
  bytes += text;
  bytes.reserve(bytes.size() + offset * 4);
  for (int g = 0; g < 3; ++g) {
    for (const auto& [name, t] : groups[g]->entries()) {
      for (float f : t.values()) detail::put_le<std::uint32_t>(bytes, std::bit_cast<std::uint32_t>(f));
    }
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t prefix = kCheckpointMagic.size() + 4 + 8;
  if (bytes.size() < prefix || std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    throw LoadError("not a checkpoint file: " + path);
  }
  const auto version = detail::get_le<std::uint32_t>(bytes.data() + 8);
  if (version != kCheckpointVersion) {
    throw LoadError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  }
  const auto header_len = detail::get_le<std::uint64_t>(bytes.data() + 12);
  if (header_len > bytes.size() - prefix) throw LoadError("truncated checkpoint header in " + path);

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(bytes.begin() + prefix, bytes.begin() + prefix + header_len);
    ck.model = model_config_from_json(header.at("model"));
    ck.run_config = header.at("run_config").get<std::map<std::string, std::string>>();
    ck.state.seed = header.at("seed").get<std::uint64_t>();
    ck.state.step = header.at("step").get<std::int64_t>();
    ck.geotag_enabled = header.at("geotag_enabled").get<bool>();
    const auto float_count = header.at("float_count").get<std::uint64_t>();
    const std::size_t data_start = prefix + header_len;
    if (bytes.size() - data_start != float_count * 4) throw LoadError("checkpoint payload size mismatch in " + path);

    ParamSet<float>* groups[] = {&ck.state.params, &ck.state.first_moment, &ck.state.second_moment};
    for (const auto& entry : header.at("tensors")) {
      const auto group = entry.at("group").get<std::string>();
      int g = 0;
      while (g < 3 && group != detail::checkpoint_group_name(g)) ++g;
      if (g == 3) throw LoadError("unknown tensor group " + group + " in " + path);
      const auto dims = entry.at("shape").get<std::vector<int>>();
      if (dims.size() != 4) throw LoadError("bad tensor shape in " + path);
      Tensor<float> t(Shape{dims[0], dims[1], dims[2], dims[3]});
      const auto offset = entry.at("offset").get<std::uint64_t>();
      if (offset + t.size() > float_count) throw LoadError("tensor extends past payload in " + path);
      const char* p = bytes.data() + data_start + offset * 4;
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(p + 4 * i));
      groups[g]->add(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed checkpoint header in " + path + ": " + e.what());
  }

  // Parameter table must match what the recorded config would build.
  const NetworkParams expected = init_params(ck.model, 0);
  for (const ParamSet<float>* g : {&ck.state.params, &ck.state.first_moment, &ck.state.second_moment}) {
    if (g->count() != expected.tensors.count()) throw LoadError("checkpoint tensor set does not match its config: " + path);
    for (const auto& [name, t] : expected.tensors.entries()) {
      if (!g->contains(name) || !(g->get(name).shape() == t.shape())) {
        throw LoadError("checkpoint tensor " + name + " missing or misshaped in " + path);
      }
    }
  }
  return ck;
}

}  // namespace geodepth

#endif  // GEODEPTH_CHECKPOINT_HPP
