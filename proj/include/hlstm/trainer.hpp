#pragma once

#include <limits>

#include "hlstm/packer.hpp"

// Frame cross-entropy training: parallel-stream minibatches, truncated
// gradients with carried states, plain SGD with column-norm capping, and
// the validation-driven halving schedule for the learning rate.

namespace hlstm {

struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

enum class NetMode { uni, blstm_full, lc_blstm, csc };

inline const char* mode_name(NetMode m) {
  switch (m) {
    case NetMode::uni: return "uni";
    case NetMode::blstm_full: return "blstm-full";
    case NetMode::lc_blstm: return "lc-blstm";
    case NetMode::csc: return "csc";
  }
  return "?";
}

// Validation-loss driven halving. "No gain" compares against the best loss
// seen so far; ties count as no gain.
struct LrSchedule {
  double rate = 0.2;
  double factor = 0.5;
  double best = std::numeric_limits<double>::infinity();
};

inline LrSchedule step_lr(LrSchedule sched, double validation_loss) {
  if (validation_loss >= sched.best)
    sched.rate *= sched.factor;
  else
    sched.best = validation_loss;
  return sched;
}

// Highway dropout rate as a pure function of the 0-based epoch index:
// small early, large after the switch epoch.
struct DropoutSchedule {
  int switch_epoch = 5;
  double early_rate = 0.1;
  double late_rate = 0.8;

  double rate(int epoch_index) const {
    return epoch_index < switch_epoch ? early_rate : late_rate;
  }
};

// Rescales every column of the input and recurrent weight matrices whose
// Euclidean norm exceeds cap back down to exactly cap. Peepholes, biases,
// projections and the output layer are left alone.
inline void apply_max_norm(StackParams& params, double cap) {
  require(cap > 0.0, "apply_max_norm: cap must be positive");
  for (auto& ref : collect_tensors(params)) {
    if (!ref.is_matrix) continue;
    if (ref.kind != TensorKind::input_weight && ref.kind != TensorKind::recurrent_weight)
      continue;
    for (int c = 0; c < ref.cols; ++c) {
      double sq = 0.0;
      for (int r = 0; r < ref.rows; ++r) {
        const double v = ref.data[static_cast<size_t>(r) * ref.cols + c];
        sq += v * v;
      }
      const double norm = std::sqrt(sq);
      if (norm > cap) {
        const double scale = cap / norm;
        for (int r = 0; r < ref.rows; ++r) ref.data[static_cast<size_t>(r) * ref.cols + c] *= scale;
      }
    }
  }
}

inline PackerConfig make_packer_config(NetMode mode, int n_streams, int segment_len, int nc,
                                       int nr, int nl) {
  PackerConfig pc;
  pc.n_streams = n_streams;
  switch (mode) {
    case NetMode::uni:
      pc.segment_len = segment_len;
      break;
    case NetMode::blstm_full:
      pc.whole_utterance = true;
      pc.segment_len = 1;
      break;
    case NetMode::lc_blstm:
      pc.segment_len = nc;
      pc.nr = nr;
      break;
    case NetMode::csc:
      pc.segment_len = nc;
      pc.nr = nr;
      pc.nl = nl;
      break;
  }
  return pc;
}

struct TrainConfig {
  NetMode mode = NetMode::uni;
  int n_streams = 40;
  int segment_len = 20;  // BPTT segment for uni mode
  int nc = 22;
  int nr = 21;
  int nl = 22;  // csc left context
  double lr = 0.2;
  bool lr_per_sample = false;  // false: minibatch gradients averaged per valid frame
  bool max_norm = true;
  double max_norm_cap = 1.0;
  bool dropout = false;  // highway dropout via the schedule below
  DropoutSchedule dropout_schedule{};
  int epoch_index = 0;
  uint64_t dropout_seed = 1;

  PackerConfig packer_config() const {
    return make_packer_config(mode, n_streams, segment_len, nc, nr, nl);
  }
};

namespace detail {

inline std::vector<DropoutMask> draw_masks(const StackSpec& spec, const StackParams& params,
                                           bool backward_dir, double rate, RngStream& rng) {
  std::vector<DropoutMask> masks;
  masks.reserve(spec.layers.size());
  for (int l = 0; l < spec.n_layers(); ++l) {
    const DirectionParams& dp = backward_dir ? params.layers[l].bwd : params.layers[l].fwd;
    if (dp.has_highway && rate > 0.0)
      masks.push_back(make_dropout_mask(rng, spec.layers[l].cell_dim, rate));
    else
      masks.push_back(DropoutMask::identity(spec.layers[l].cell_dim));
  }
  return masks;
}

// Forward for one batch under the given mode. carried is ignored by the
// stateless modes.
inline ChunkForward batch_forward(const StackSpec& spec, const StackParams& params, NetMode mode,
                                  const ChunkBatch& batch, CarriedStates& carried,
                                  const std::vector<DropoutMask>* fwd_masks,
                                  const std::vector<DropoutMask>* bwd_masks) {
  if (mode == NetMode::csc) {
    ChunkForward out;
    out.streams.resize(batch.streams.size());
    for (size_t s = 0; s < batch.streams.size(); ++s) {
      const auto& stream = batch.streams[s];
      if (!stream.active || stream.frames.empty()) continue;
      StackActivations acts = csc_chunk_forward(spec, params, stream, fwd_masks, bwd_masks);
      out.stack_macs += acts.stack_macs;
      out.head_macs += acts.head_macs;
      out.streams[s] = std::move(acts);
    }
    return out;
  }
  // uni / blstm_full / lc_blstm all run the carried-state path; for
  // blstm_full each chunk is a whole fresh utterance, for uni there is no
  // future context, so the same machinery covers all three.
  return forward_lc_chunk(spec, params, batch, carried, fwd_masks, bwd_masks);
}

}  // namespace detail

struct EvalResult {
  double mean_ce = 0.0;
  double frame_accuracy = 0.0;
  long n_frames = 0;
};

// Inference-mode scoring (identity dropout). Chunked modes are evaluated
// with their own chunked forward so the metric reflects deployment.
inline EvalResult evaluate(const StackSpec& spec, const StackParams& params, const Dataset& data,
                           NetMode mode, int nc = 22, int nr = 21, int nl = 22) {
  EvalResult res;
  double ce = 0.0;
  long correct = 0;
  for (const auto& utt : data.utts) {
    std::vector<Vector> log_post;
    switch (mode) {
      case NetMode::uni:
      case NetMode::blstm_full:
        log_post = forward_full(spec, params, utt.frames).log_post;
        break;
      case NetMode::lc_blstm:
        log_post = lc_forward_utterance(spec, params, utt.frames, nc, nr);
        break;
      case NetMode::csc:
        log_post = csc_forward_utterance(spec, params, utt.frames, nl, nc, nr);
        break;
    }
    for (int t = 0; t < utt.length(); ++t) {
      ce -= log_post[t][utt.labels[t]];
      int best = 0;
      for (int k = 1; k < spec.output_dim; ++k)
        if (log_post[t][k] > log_post[t][best]) best = k;
      correct += best == utt.labels[t];
    }
    res.n_frames += utt.length();
  }
  require(res.n_frames > 0, "evaluate: empty dataset");
  res.mean_ce = ce / static_cast<double>(res.n_frames);
  res.frame_accuracy = static_cast<double>(correct) / static_cast<double>(res.n_frames);
  return res;
}

struct EpochResult {
  double train_loss = 0.0;  // mean CE per trained frame
  double valid_loss = 0.0;
  double dropout_rate = 0.0;
  long n_frames = 0;
  int n_batches = 0;
};

// One pass over the training data with SGD updates, then a validation pass.
inline EpochResult train_epoch(const StackSpec& spec, StackParams& params, const Dataset& train,
                               const Dataset& valid, const TrainConfig& cfg) {
  require(train.feature_dim == spec.input_dim && train.n_classes == spec.output_dim,
          "train_epoch: dataset does not match the stack");
  EpochResult res;
  res.dropout_rate = cfg.dropout ? cfg.dropout_schedule.rate(cfg.epoch_index) : 0.0;

  Packer packer(train, cfg.packer_config());
  CarriedStates carried = make_carried(spec, cfg.n_streams);
  RngStream dropout_rng(cfg.dropout_seed);
  StackParams grads = make_stack_params(spec);

  double total_ce = 0.0;
  ChunkBatch batch;
  while (packer.next(batch)) {
    const std::vector<DropoutMask> fwd_masks =
        detail::draw_masks(spec, params, false, res.dropout_rate, dropout_rng);
    const std::vector<DropoutMask> bwd_masks =
        spec.bidirectional ? detail::draw_masks(spec, params, true, res.dropout_rate, dropout_rng)
                           : std::vector<DropoutMask>{};

    ChunkForward fwd = detail::batch_forward(spec, params, cfg.mode, batch, carried, &fwd_masks,
                                             spec.bidirectional ? &bwd_masks : nullptr);

    long n_valid = 0;
    for (const auto& s : batch.streams)
      if (s.active) n_valid += s.valid_count();
    if (n_valid == 0) continue;

    const double inv = cfg.lr_per_sample ? 1.0 : 1.0 / static_cast<double>(n_valid);
    std::vector<std::vector<Vector>> dlogits(batch.streams.size());
    double batch_ce = 0.0;
    for (size_t s = 0; s < batch.streams.size(); ++s) {
      const auto& stream = batch.streams[s];
      if (!stream.active) continue;
      const StackActivations& acts = *fwd.streams[s];
      dlogits[s].resize(stream.valid_count());
      for (int t = 0; t < stream.valid_count(); ++t) {
        batch_ce -= acts.log_post[t][stream.labels[t]];
        dlogits[s][t] = dlogits_from_ce(acts.post[t], stream.labels[t]);
        for (int k = 0; k < spec.output_dim; ++k) dlogits[s][t][k] *= inv;
      }
    }
    if (!std::isfinite(batch_ce))
      throw DivergenceError("train_epoch: loss diverged (NaN/Inf) at batch " +
                            std::to_string(res.n_batches));
    total_ce += batch_ce;
    res.n_frames += n_valid;
    ++res.n_batches;

    for (auto& ref : collect_tensors(grads))
      for (size_t i = 0; i < ref.size; ++i) ref.data[i] = 0.0;
    backward_lc_chunk(spec, params, fwd, dlogits, grads);
    axpy_params(params, -cfg.lr, grads);
    if (cfg.max_norm) apply_max_norm(params, cfg.max_norm_cap);
  }
  require(res.n_frames > 0, "train_epoch: no training frames");
  res.train_loss = total_ce / static_cast<double>(res.n_frames);
  res.valid_loss = evaluate(spec, params, valid, cfg.mode, cfg.nc, cfg.nr, cfg.nl).mean_ce;
  return res;
}

}  // namespace hlstm
