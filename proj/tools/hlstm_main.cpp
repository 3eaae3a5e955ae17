#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hlstm/config.hpp"
#include "hlstm/gradcheck.hpp"
#include "hlstm/serialize.hpp"

// Command-line front end: synth | train | seqtrain | eval | gradcheck |
// chunkcmp. Metrics go to stdout as one JSON object per line (and to
// --metrics when given). Exit codes: 0 ok, 1 failed check, 2 bad config.

namespace {

using namespace hlstm;
namespace fs = std::filesystem;
using nlohmann::json;

struct Metrics {
  std::ofstream file;

  void open(const std::string& path) {
    if (path.empty()) return;
    file.open(path);
    require(file.good(), "cannot open metrics file " + path);
  }
  void emit(const json& j) {
    const std::string line = j.dump();
    std::cout << line << "\n";
    if (file.is_open()) file << line << "\n";
  }
};

int cmd_synth(const RunConfig& cfg, const std::string& out_dir, Metrics& metrics) {
  fs::create_directories(out_dir);
  SynthConfig sc = build_synth_config(cfg);
  RngStream rng(cfg.seed);
  Dataset train = synth_dataset(sc, cfg.train_utts, rng);
  Dataset valid = synth_dataset(sc, cfg.valid_utts, rng);
  Dataset test = synth_dataset(sc, cfg.test_utts, rng);
  save_dataset(out_dir + "/train.data", train);
  save_dataset(out_dir + "/valid.data", valid);
  save_dataset(out_dir + "/test.data", test);
  write_graph_file(out_dir + "/graph.txt", make_label_graph(train));
  metrics.emit(json{{"event", "synth"},
                    {"alphabet", cfg.alphabet},
                    {"context_k", cfg.context_k},
                    {"noise", cfg.noise},
                    {"train_utts", train.n_utts()},
                    {"valid_utts", valid.n_utts()},
                    {"test_utts", test.n_utts()},
                    {"train_frames", train.total_frames()}});
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_path,
              Metrics& metrics) {
  Dataset train = load_dataset(data_dir + "/train.data");
  Dataset valid = load_dataset(data_dir + "/valid.data");
  StackSpec spec = build_stack_spec(cfg, train.feature_dim, train.n_classes);
  RngStream rng(cfg.seed);
  StackParams params = init_stack_params(spec, rng);

  LrSchedule sched;
  sched.rate = cfg.lr;
  sched.factor = cfg.lr_halving;
  for (int e = 0; e < cfg.epochs; ++e) {
    TrainConfig tc = build_train_config(cfg, e, sched.rate);
    EpochResult res = train_epoch(spec, params, train, valid, tc);
    metrics.emit(json{{"epoch", e},
                      {"lr", sched.rate},
                      {"dropout_rate", res.dropout_rate},
                      {"train_loss", res.train_loss},
                      {"valid_loss", res.valid_loss}});
    sched = step_lr(sched, res.valid_loss);
  }
  if (!out_path.empty()) save_checkpoint(out_path, spec, params);
  return 0;
}

int cmd_seqtrain(const RunConfig& cfg, const std::string& data_dir, const std::string& graph_path,
                 const std::string& init_path, const std::string& out_path, Metrics& metrics) {
  Dataset train = load_dataset(data_dir + "/train.data");
  DecodingGraph graph = parse_graph_file(graph_path);
  require(static_cast<int>(graph.numerators.size()) >= train.n_utts(),
          "seqtrain: graph lacks numerators for the training set");
  for (int u = 0; u < train.n_utts(); ++u)
    require(graph.numerators[u].size() == train.utts[u].frames.size(),
            "seqtrain: numerator length mismatch for utterance " + std::to_string(u));

  auto [spec, params] = load_checkpoint(init_path);
  require(spec.input_dim == train.feature_dim && spec.output_dim == train.n_classes,
          "seqtrain: checkpoint does not match the dataset");

  const NetMode mode = parse_mode(cfg.mode);
  const double before =
      mean_expected_accuracy(spec, params, train, graph, cfg.kappa, mode, cfg.nc, cfg.nr, cfg.nl);
  metrics.emit(json{{"event", "measure"}, {"when", "before"}, {"expected_accuracy", before}});

  for (int e = 0; e < cfg.seq_epochs; ++e) {
    SeqTrainConfig sc = build_seq_config(cfg, e);
    SeqEpochResult res = train_sequence_epoch(spec, params, train, graph, sc);
    metrics.emit(json{{"epoch", e},
                      {"pool_expected_accuracy", res.mean_expected_accuracy},
                      {"cycles", res.n_cycles},
                      {"utterances", res.n_utts}});
  }

  const double after =
      mean_expected_accuracy(spec, params, train, graph, cfg.kappa, mode, cfg.nc, cfg.nr, cfg.nl);
  metrics.emit(json{{"event", "measure"}, {"when", "after"}, {"expected_accuracy", after}});
  if (!out_path.empty()) save_checkpoint(out_path, spec, params);
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& data_dir, const std::string& split,
             const std::string& ckpt_path, Metrics& metrics) {
  Dataset data = load_dataset(data_dir + "/" + split + ".data");
  auto [spec, params] = load_checkpoint(ckpt_path);
  require(spec.input_dim == data.feature_dim && spec.output_dim == data.n_classes,
          "eval: checkpoint does not match the dataset");
  EvalResult res = evaluate(spec, params, data, parse_mode(cfg.mode), cfg.nc, cfg.nr, cfg.nl);
  metrics.emit(json{{"split", split},
                    {"mean_ce", res.mean_ce},
                    {"frame_accuracy", res.frame_accuracy},
                    {"frames", res.n_frames}});
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg, Metrics& metrics) {
  const double tolerance = 1e-4;
  double worst = 0.0;
  for (const auto& c : run_gradient_suite(cfg.seed)) {
    metrics.emit(json{{"case", c.name},
                      {"max_rel_err", c.report.max_rel_err},
                      {"worst_tensor", c.report.worst_tensor}});
    worst = std::max(worst, c.report.max_rel_err);
  }
  const bool pass = worst <= tolerance;
  metrics.emit(json{{"event", "gradcheck"},
                    {"max_rel_err", worst},
                    {"tolerance", tolerance},
                    {"pass", pass}});
  return pass ? 0 : 1;
}

int cmd_chunkcmp(const RunConfig& cfg, Metrics& metrics) {
  const NetMode mode = parse_mode(cfg.mode);
  require(mode != NetMode::csc, "chunkcmp: mode must be uni, blstm-full or lc-blstm");
  const int T = cfg.cmp_frames;
  const int pos = std::max(cfg.nl, cfg.nc);
  require(pos + cfg.nc + cfg.nr <= T,
          "chunkcmp: cmp_frames too small for an interior chunk at these sizes");

  StackSpec spec = build_stack_spec(cfg, cfg.alphabet, cfg.alphabet);
  RngStream rng(cfg.seed);
  StackParams params = init_stack_params(spec, rng, 0.3);
  std::vector<Vector> frames(T);
  for (auto& f : frames) f = sample_uniform(rng, cfg.alphabet, -1, 1);

  mac_reset();
  StackActivations full = forward_full(spec, params, frames);
  const uint64_t full_macs = mac_read();

  mac_reset();
  std::vector<Vector> lc =
      lc_forward_utterance(spec, params, frames, cfg.nc, spec.bidirectional ? cfg.nr : 0);
  const uint64_t lc_total_macs = mac_read();

  mac_reset();
  std::vector<Vector> csc = csc_forward_utterance(spec, params, frames, cfg.nl, cfg.nc,
                                                  spec.bidirectional ? cfg.nr : 0);
  const uint64_t csc_total_macs = mac_read();

  auto divergence = [&](const std::vector<Vector>& lp) {
    double worst = 0.0;
    for (int t = 0; t < T; ++t)
      for (int k = 0; k < spec.output_dim; ++k)
        worst = std::max(worst, std::abs(std::exp(lp[t][k]) - full.post[t][k]));
    return worst;
  };
  const double div_lc = divergence(lc);
  const double div_csc = divergence(csc);

  // counted work of one interior chunk under each scheme
  ChunkBatch batch;
  batch.segment_len = cfg.nc;
  batch.streams.resize(1);
  auto& st = batch.streams[0];
  st.frames.assign(frames.begin() + pos, frames.begin() + pos + cfg.nc);
  st.future.assign(frames.begin() + pos + cfg.nc, frames.begin() + pos + cfg.nc + cfg.nr);
  st.active = true;
  st.fresh = false;
  CarriedStates carried = make_carried(spec, 1);
  const uint64_t lc_macs = forward_lc_chunk(spec, params, batch, carried).stack_macs;

  ChunkBatch::Stream cs = st;
  cs.left.assign(frames.begin() + pos - cfg.nl, frames.begin() + pos);
  const uint64_t csc_macs = csc_chunk_forward(spec, params, cs).stack_macs;

  const bool factor_exact =
      (csc_macs - lc_macs) * static_cast<uint64_t>(cfg.nl + cfg.nc + cfg.nr) ==
      static_cast<uint64_t>(cfg.nl) * csc_macs;
  const double factor = static_cast<double>(cfg.nl) / (cfg.nl + cfg.nc + cfg.nr);

  metrics.emit(json{{"event", "chunkcmp"},
                    {"mode", cfg.mode},
                    {"nl", cfg.nl},
                    {"nc", cfg.nc},
                    {"nr", cfg.nr},
                    {"divergence_lc", div_lc},
                    {"divergence_csc", div_csc},
                    {"interior_lc_macs", lc_macs},
                    {"interior_csc_macs", csc_macs},
                    {"saving_factor", factor},
                    {"factor_exact", factor_exact},
                    {"full_macs", full_macs},
                    {"lc_total_macs", lc_total_macs},
                    {"csc_total_macs", csc_total_macs}});

  bool ok = factor_exact;
  if (mode == NetMode::uni && div_lc > 1e-10) ok = false;
  if (!ok) metrics.emit(json{{"event", "chunkcmp"}, {"pass", false}});
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recurrent training kit"};
  app.require_subcommand(1);

  RunConfig cfg;
  if (const char* env = std::getenv("HLSTM_SEED")) cfg.seed = std::strtoull(env, nullptr, 10);

  std::string config_path, metrics_path;
  std::string out_dir = "data", data_dir = "data", out_ckpt, init_ckpt, ckpt, graph_path,
              split = "test";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file; its values override flags");
    sub->add_option("--metrics", metrics_path, "also write metrics lines to this file");
    sub->add_option("--seed", cfg.seed, "rng seed (HLSTM_SEED sets the default)");
  };
  auto add_model = [&](CLI::App* sub) {
    sub->add_option("--mode", cfg.mode, "uni | blstm-full | lc-blstm | csc");
    sub->add_option("--layers", cfg.layers);
    sub->add_option("--cell-dims", cfg.cell_dims, "cells per layer, single value or list");
    sub->add_option("--proj-dim", cfg.proj_dim, "projection size, 0 for none");
    sub->add_flag("--highway,!--no-highway", cfg.highway);
    sub->add_option("--nc", cfg.nc);
    sub->add_option("--nr", cfg.nr);
    sub->add_option("--nl", cfg.nl);
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic task");
  add_common(synth);
  synth->add_option("--out", out_dir, "output directory");
  synth->add_option("--alphabet", cfg.alphabet);
  synth->add_option("--context-k", cfg.context_k);
  synth->add_option("--noise", cfg.noise);
  synth->add_option("--stay-prob", cfg.stay_prob);
  synth->add_option("--train-utts", cfg.train_utts);
  synth->add_option("--valid-utts", cfg.valid_utts);
  synth->add_option("--test-utts", cfg.test_utts);
  synth->add_option("--min-len", cfg.min_len);
  synth->add_option("--max-len", cfg.max_len);

  CLI::App* train = app.add_subcommand("train", "frame cross-entropy training");
  add_common(train);
  add_model(train);
  train->add_option("--data", data_dir, "dataset directory");
  train->add_option("--out", out_ckpt, "checkpoint to write");
  train->add_option("--epochs", cfg.epochs);
  train->add_option("--segment-len", cfg.segment_len);
  train->add_option("--n-streams", cfg.n_streams);
  train->add_option("--lr", cfg.lr);
  train->add_flag("--lr-per-sample,!--lr-per-minibatch", cfg.lr_per_sample);
  train->add_option("--lr-halving", cfg.lr_halving);
  train->add_flag("--max-norm,!--no-max-norm", cfg.max_norm);
  train->add_option("--max-norm-cap", cfg.max_norm_cap);
  train->add_flag("--dropout,!--no-dropout", cfg.dropout);
  train->add_option("--dropout-early", cfg.dropout_early);
  train->add_option("--dropout-late", cfg.dropout_late);
  train->add_option("--dropout-switch-epoch", cfg.dropout_switch_epoch);

  CLI::App* seqtrain = app.add_subcommand("seqtrain", "two-pass sequence training");
  add_common(seqtrain);
  add_model(seqtrain);
  seqtrain->add_option("--data", data_dir, "dataset directory");
  seqtrain->add_option("--graph", graph_path, "decoding graph file")->required();
  seqtrain->add_option("--init", init_ckpt, "checkpoint to start from")->required();
  seqtrain->add_option("--out", out_ckpt, "checkpoint to write");
  seqtrain->add_option("--seq-epochs", cfg.seq_epochs);
  seqtrain->add_option("--seq-lr", cfg.seq_lr);
  seqtrain->add_flag("--seq-lr-per-sample,!--seq-lr-per-minibatch", cfg.seq_lr_per_sample);
  seqtrain->add_option("--kappa", cfg.kappa);
  seqtrain->add_option("--pool-capacity", cfg.pool_capacity);
  seqtrain->add_option("--pool-frame-budget", cfg.pool_frame_budget);
  seqtrain->add_option("--segment-len", cfg.segment_len);
  seqtrain->add_option("--n-streams", cfg.n_streams);
  seqtrain->add_flag("--dropout,!--no-dropout", cfg.dropout);

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint");
  add_common(eval);
  add_model(eval);
  eval->add_option("--data", data_dir, "dataset directory");
  eval->add_option("--split", split, "train | valid | test");
  eval->add_option("--ckpt", ckpt, "checkpoint to score")->required();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(gradcheck);

  CLI::App* chunkcmp = app.add_subcommand("chunkcmp", "compare chunked evaluation schemes");
  add_common(chunkcmp);
  add_model(chunkcmp);
  chunkcmp->add_option("--frames", cfg.cmp_frames, "utterance length for the comparison");
  chunkcmp->add_option("--alphabet", cfg.alphabet, "feature/class dimension of the toy model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cout << json{{"error", e.what()}}.dump() << "\n";
    return 2;
  }

  Metrics metrics;
  try {
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    metrics.open(metrics_path);
    if (synth->parsed()) return cmd_synth(cfg, out_dir, metrics);
    if (train->parsed()) return cmd_train(cfg, data_dir, out_ckpt, metrics);
    if (seqtrain->parsed())
      return cmd_seqtrain(cfg, data_dir, graph_path, init_ckpt, out_ckpt, metrics);
    if (eval->parsed()) return cmd_eval(cfg, data_dir, split, ckpt, metrics);
    if (gradcheck->parsed()) return cmd_gradcheck(cfg, metrics);
    if (chunkcmp->parsed()) return cmd_chunkcmp(cfg, metrics);
  } catch (const ContractError& e) {
    metrics.emit(json{{"error", e.what()}});
    return 2;
  } catch (const std::exception& e) {
    metrics.emit(json{{"error", e.what()}});
    return 1;
  }
  return 2;
}
