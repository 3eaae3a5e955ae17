#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hlstm/serialize.hpp"
#include "hlstm/tensor.hpp"

// Frame-labelled utterance sets and their on-disk form: a text header line,
// a JSON description, then little-endian binary frames and labels.

namespace hlstm {

struct Utterance {
  std::vector<Vector> frames;
  std::vector<int> labels;
  int length() const { return static_cast<int>(frames.size()); }
};

struct Dataset {
  int feature_dim = 0;
  int n_classes = 0;
  std::vector<Utterance> utts;

  int n_utts() const { return static_cast<int>(utts.size()); }
  long total_frames() const {
    long n = 0;
    for (const auto& u : utts) n += u.length();
    return n;
  }
  void check() const {
    require(feature_dim > 0 && n_classes > 0, "dataset: bad dims");
    for (const auto& u : utts) {
      require(u.frames.size() == u.labels.size(), "dataset: frame/label count mismatch");
      require(!u.frames.empty(), "dataset: empty utterance");
      for (const auto& f : u.frames)
        require(f.dim() == feature_dim, "dataset: frame dim mismatch");
      for (int l : u.labels) require(l >= 0 && l < n_classes, "dataset: label out of range");
    }
  }
};

inline void save_dataset(std::ostream& os, const Dataset& d) {
  nlohmann::json header;
  header["feature_dim"] = d.feature_dim;
  header["n_classes"] = d.n_classes;
  header["utterances"] = d.n_utts();
  os << "HLSTMDATA 1\n" << header.dump() << "\nbinary\n";
  for (const auto& u : d.utts) {
    ioutil::write_u32(os, static_cast<uint32_t>(u.length()));
    for (const auto& f : u.frames)
      for (int i = 0; i < f.dim(); ++i) ioutil::write_f64(os, f[i]);
    for (int l : u.labels) ioutil::write_i32(os, l);
  }
}

inline void save_dataset(const std::string& path, const Dataset& d) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "save_dataset: cannot open file");
  save_dataset(os, d);
  require(os.good(), "save_dataset: write failed");
}

inline Dataset load_dataset(std::istream& is) {
  std::string magic;
  std::getline(is, magic);
  require(magic == "HLSTMDATA 1", "load_dataset: bad magic or version");
  std::string header_line, marker;
  std::getline(is, header_line);
  std::getline(is, marker);
  require(marker == "binary", "load_dataset: missing binary marker");
  nlohmann::json header = nlohmann::json::parse(header_line);

  Dataset d;
  d.feature_dim = header.at("feature_dim").get<int>();
  d.n_classes = header.at("n_classes").get<int>();
  const int n = header.at("utterances").get<int>();
  d.utts.resize(n);
  for (auto& u : d.utts) {
    const int t = static_cast<int>(ioutil::read_u32(is));
    u.frames.assign(t, Vector(d.feature_dim));
    u.labels.assign(t, 0);
    for (auto& f : u.frames)
      for (int i = 0; i < d.feature_dim; ++i) f[i] = ioutil::read_f64(is);
    for (int j = 0; j < t; ++j) u.labels[j] = ioutil::read_i32(is);
  }
  require(is.good(), "load_dataset: truncated payload");
  d.check();
  return d;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "load_dataset: cannot open file");
  return load_dataset(is);
}

}  // namespace hlstm
