#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "hlstm/seqtrain.hpp"
#include "hlstm/synth.hpp"

// Run configuration shared by the command-line tools. Every default named
// by the training recipe lives here; a `key = value` config file can
// override any field (file values win over flags). '#' starts a comment.

namespace hlstm {

struct RunConfig {
  // model
  std::string mode = "uni";  // uni | blstm-full | lc-blstm | csc
  int layers = 3;
  std::string cell_dims = "16";  // single value or one per layer, comma separated
  int proj_dim = 8;              // 0 = no projection
  bool highway = false;

  // cross-entropy training
  int segment_len = 20;
  int n_streams = 40;
  int nc = 22;
  int nr = 21;
  int nl = 22;
  double lr = 0.2;
  bool lr_per_sample = false;
  double lr_halving = 0.5;
  bool max_norm = true;
  double max_norm_cap = 1.0;
  bool dropout = false;
  double dropout_early = 0.1;
  double dropout_late = 0.8;
  int dropout_switch_epoch = 5;
  int epochs = 10;
  uint64_t seed = 1;

  // sequence training
  double seq_lr = 2e-6;
  bool seq_lr_per_sample = true;
  double kappa = 0.2;
  int pool_capacity = 40;
  long pool_frame_budget = 1000000;
  int seq_epochs = 1;

  // synthesis
  int alphabet = 6;
  int context_k = 0;
  double noise = 0.0;
  double stay_prob = 0.5;
  int train_utts = 60;
  int valid_utts = 10;
  int test_utts = 20;
  int min_len = 20;
  int max_len = 40;

  // chunk comparison
  int cmp_frames = 120;
};

inline NetMode parse_mode(const std::string& s) {
  if (s == "uni") return NetMode::uni;
  if (s == "blstm-full") return NetMode::blstm_full;
  if (s == "lc-blstm") return NetMode::lc_blstm;
  if (s == "csc") return NetMode::csc;
  throw ContractError("unknown mode '" + s + "'");
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    require(!tok.empty(), "empty entry in integer list");
    out.push_back(std::stoi(tok));
  }
  require(!out.empty(), "empty integer list");
  return out;
}

inline StackSpec build_stack_spec(const RunConfig& cfg, int input_dim, int n_classes) {
  StackSpec spec;
  spec.input_dim = input_dim;
  spec.output_dim = n_classes;
  const NetMode mode = parse_mode(cfg.mode);
  spec.bidirectional = mode != NetMode::uni;
  std::vector<int> cells = parse_int_list(cfg.cell_dims);
  require(static_cast<int>(cells.size()) == 1 || static_cast<int>(cells.size()) == cfg.layers,
          "cell_dims must list one value or one per layer");
  for (int l = 0; l < cfg.layers; ++l) {
    LayerSpec ls;
    ls.kind = (cfg.highway && l > 0) ? LayerKind::highway_lstm : LayerKind::lstm;
    ls.cell_dim = cells.size() == 1 ? cells[0] : cells[l];
    ls.proj_dim = cfg.proj_dim;
    spec.layers.push_back(ls);
  }
  spec.check();
  return spec;
}

inline TrainConfig build_train_config(const RunConfig& cfg, int epoch_index, double rate) {
  TrainConfig tc;
  tc.mode = parse_mode(cfg.mode);
  tc.n_streams = cfg.n_streams;
  tc.segment_len = cfg.segment_len;
  tc.nc = cfg.nc;
  tc.nr = cfg.nr;
  tc.nl = cfg.nl;
  tc.lr = rate;
  tc.lr_per_sample = cfg.lr_per_sample;
  tc.max_norm = cfg.max_norm;
  tc.max_norm_cap = cfg.max_norm_cap;
  tc.dropout = cfg.dropout;
  tc.dropout_schedule =
      DropoutSchedule{cfg.dropout_switch_epoch, cfg.dropout_early, cfg.dropout_late};
  tc.epoch_index = epoch_index;
  tc.dropout_seed = cfg.seed * 1000003ULL + static_cast<uint64_t>(epoch_index);
  return tc;
}

inline SeqTrainConfig build_seq_config(const RunConfig& cfg, int epoch_index) {
  SeqTrainConfig sc;
  sc.mode = parse_mode(cfg.mode);
  sc.n_streams = cfg.n_streams;
  sc.segment_len = cfg.segment_len;
  sc.nc = cfg.nc;
  sc.nr = cfg.nr;
  sc.nl = cfg.nl;
  sc.lr = cfg.seq_lr;
  sc.lr_per_sample = cfg.seq_lr_per_sample;
  sc.kappa = cfg.kappa;
  sc.pool_capacity = cfg.pool_capacity;
  sc.pool_frame_budget = cfg.pool_frame_budget;
  sc.max_norm = cfg.max_norm;
  sc.max_norm_cap = cfg.max_norm_cap;
  sc.dropout = cfg.dropout;
  sc.dropout_schedule =
      DropoutSchedule{cfg.dropout_switch_epoch, cfg.dropout_early, cfg.dropout_late};
  sc.epoch_index = epoch_index;
  sc.dropout_seed = cfg.seed * 2000003ULL + static_cast<uint64_t>(epoch_index);
  return sc;
}

inline SynthConfig build_synth_config(const RunConfig& cfg) {
  SynthConfig sc;
  sc.alphabet = cfg.alphabet;
  sc.context_k = cfg.context_k;
  sc.noise = cfg.noise;
  sc.stay_prob = cfg.stay_prob;
  sc.min_len = cfg.min_len;
  sc.max_len = cfg.max_len;
  return sc;
}

// key = value pairs, '#' comments, unknown keys rejected.
inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto as_int = [&] { return std::stoi(value); };
  auto as_long = [&] { return std::stol(value); };
  auto as_double = [&] { return std::stod(value); };
  auto as_bool = [&] {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ContractError("config: bad boolean for " + key);
  };
  auto as_u64 = [&] { return static_cast<uint64_t>(std::stoull(value)); };

  if (key == "mode") cfg.mode = value;
  else if (key == "layers") cfg.layers = as_int();
  else if (key == "cell_dims") cfg.cell_dims = value;
  else if (key == "proj_dim") cfg.proj_dim = as_int();
  else if (key == "highway") cfg.highway = as_bool();
  else if (key == "segment_len") cfg.segment_len = as_int();
  else if (key == "n_streams") cfg.n_streams = as_int();
  else if (key == "nc") cfg.nc = as_int();
  else if (key == "nr") cfg.nr = as_int();
  else if (key == "nl") cfg.nl = as_int();
  else if (key == "lr") cfg.lr = as_double();
  else if (key == "lr_per_sample") cfg.lr_per_sample = as_bool();
  else if (key == "lr_halving") cfg.lr_halving = as_double();
  else if (key == "max_norm") cfg.max_norm = as_bool();
  else if (key == "max_norm_cap") cfg.max_norm_cap = as_double();
  else if (key == "dropout") cfg.dropout = as_bool();
  else if (key == "dropout_early") cfg.dropout_early = as_double();
  else if (key == "dropout_late") cfg.dropout_late = as_double();
  else if (key == "dropout_switch_epoch") cfg.dropout_switch_epoch = as_int();
  else if (key == "epochs") cfg.epochs = as_int();
  else if (key == "seed") cfg.seed = as_u64();
  else if (key == "seq_lr") cfg.seq_lr = as_double();
  else if (key == "seq_lr_per_sample") cfg.seq_lr_per_sample = as_bool();
  else if (key == "kappa") cfg.kappa = as_double();
  else if (key == "pool_capacity") cfg.pool_capacity = as_int();
  else if (key == "pool_frame_budget") cfg.pool_frame_budget = as_long();
  else if (key == "seq_epochs") cfg.seq_epochs = as_int();
  else if (key == "alphabet") cfg.alphabet = as_int();
  else if (key == "context_k") cfg.context_k = as_int();
  else if (key == "noise") cfg.noise = as_double();
  else if (key == "stay_prob") cfg.stay_prob = as_double();
  else if (key == "train_utts") cfg.train_utts = as_int();
  else if (key == "valid_utts") cfg.valid_utts = as_int();
  else if (key == "test_utts") cfg.test_utts = as_int();
  else if (key == "min_len") cfg.min_len = as_int();
  else if (key == "max_len") cfg.max_len = as_int();
  else if (key == "cmp_frames") cfg.cmp_frames = as_int();
  else throw ContractError("config: unknown key '" + key + "'");
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  require(is.good(), "config: cannot open " + std::string(path));
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    require(eq != std::string::npos,
            "config: line " + std::to_string(lineno) + " is not key = value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    require(!key.empty() && !value.empty(),
            "config: line " + std::to_string(lineno) + " is missing a key or value");
    apply_config_entry(cfg, key, value);
  }
}

}  // namespace hlstm
