#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <utility>

#include <json.hpp>

#include "hlstm/network.hpp"

// Checkpoint container: versioned text preamble, a JSON line describing the
// stack and the tensor directory, then the raw payload as little-endian
// IEEE-754 doubles in directory order. Writing the same parameters twice
// produces identical bytes.

namespace hlstm {

namespace ioutil {

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

inline void write_i32(std::ostream& os, int32_t v) { write_u32(os, static_cast<uint32_t>(v)); }
inline int32_t read_i32(std::istream& is) { return static_cast<int32_t>(read_u32(is)); }

inline void write_f64(std::ostream& os, double v) {
  uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace ioutil

inline nlohmann::json spec_to_json(const StackSpec& spec) {
  nlohmann::json j;
  j["input_dim"] = spec.input_dim;
  j["output_dim"] = spec.output_dim;
  j["bidirectional"] = spec.bidirectional;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    j["layers"].push_back({{"kind", l.kind == LayerKind::highway_lstm ? "highway_lstm" : "lstm"},
                           {"cell_dim", l.cell_dim},
                           {"proj_dim", l.proj_dim}});
  }
  return j;
}

inline StackSpec spec_from_json(const nlohmann::json& j) {
  StackSpec spec;
  spec.input_dim = j.at("input_dim").get<int>();
  spec.output_dim = j.at("output_dim").get<int>();
  spec.bidirectional = j.at("bidirectional").get<bool>();
  for (const auto& lj : j.at("layers")) {
    LayerSpec l;
    const std::string kind = lj.at("kind").get<std::string>();
    require(kind == "lstm" || kind == "highway_lstm", "spec_from_json: unknown layer kind");
    l.kind = kind == "highway_lstm" ? LayerKind::highway_lstm : LayerKind::lstm;
    l.cell_dim = lj.at("cell_dim").get<int>();
    l.proj_dim = lj.at("proj_dim").get<int>();
    spec.layers.push_back(l);
  }
  spec.check();
  return spec;
}

inline void save_checkpoint(std::ostream& os, const StackSpec& spec, const StackParams& params) {
  auto refs = collect_tensors(const_cast<StackParams&>(params));
  nlohmann::json header;
  header["spec"] = spec_to_json(spec);
  header["tensors"] = nlohmann::json::array();
  for (const auto& r : refs)
    header["tensors"].push_back({{"name", r.name}, {"rows", r.rows}, {"cols", r.cols}});
  os << "HLSTMCKPT 1\n" << header.dump() << "\nbinary\n";
  for (const auto& r : refs)
    for (size_t i = 0; i < r.size; ++i) ioutil::write_f64(os, r.data[i]);
}

inline void save_checkpoint(const std::string& path, const StackSpec& spec,
                            const StackParams& params) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "save_checkpoint: cannot open file");
  save_checkpoint(os, spec, params);
  require(os.good(), "save_checkpoint: write failed");
}

inline std::pair<StackSpec, StackParams> load_checkpoint(std::istream& is) {
  std::string magic;
  std::getline(is, magic);
  require(magic == "HLSTMCKPT 1", "load_checkpoint: bad magic or version");
  std::string header_line, marker;
  std::getline(is, header_line);
  std::getline(is, marker);
  require(marker == "binary", "load_checkpoint: missing binary marker");
  nlohmann::json header = nlohmann::json::parse(header_line);

  StackSpec spec = spec_from_json(header.at("spec"));
  StackParams params = make_stack_params(spec);
  auto refs = collect_tensors(params);
  const auto& tensors = header.at("tensors");
  require(tensors.size() == refs.size(), "load_checkpoint: tensor directory mismatch");
  for (size_t i = 0; i < refs.size(); ++i) {
    require(tensors[i].at("name").get<std::string>() == refs[i].name,
            "load_checkpoint: tensor name mismatch");
    require(tensors[i].at("rows").get<int>() == refs[i].rows &&
                tensors[i].at("cols").get<int>() == refs[i].cols,
            "load_checkpoint: tensor shape mismatch");
    for (size_t j = 0; j < refs[i].size; ++j) refs[i].data[j] = ioutil::read_f64(is);
  }
  require(is.good(), "load_checkpoint: truncated payload");
  return {spec, std::move(params)};
}

inline std::pair<StackSpec, StackParams> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "load_checkpoint: cannot open file");
  return load_checkpoint(is);
}

}  // namespace hlstm
