#pragma once

#include <map>

#include "hlstm/smbr.hpp"
#include "hlstm/trainer.hpp"

// Two-pass-forward sequence-discriminative training. The first pass packs
// minibatches exactly like cross-entropy training and collects per-frame
// log-likelihoods into a pool without touching the parameters. Once the
// pool's sequences are complete, their error signals come from the sMBR
// forward-backward; the minibatches are then rolled back and replayed, this
// time injecting the pooled signals at the output layer and updating per
// minibatch. Replay determinism rests on reseeding the packer and dropout
// streams from snapshots taken when the cycle started; a checksum mismatch
// between the passes aborts.

namespace hlstm {

struct ReplayDivergence : std::runtime_error {
  explicit ReplayDivergence(const std::string& what) : std::runtime_error(what) {}
};

struct SequencePool {
  struct Entry {
    int utt_id = -1;
    std::vector<Vector> loglikes;  // [frame][class] log posteriors
    int expected_length = 0;
    bool complete() const { return static_cast<int>(loglikes.size()) == expected_length; }
  };
  std::vector<Entry> entries;  // admission order

  Entry* find(int utt_id) {
    for (auto& e : entries)
      if (e.utt_id == utt_id) return &e;
    return nullptr;
  }
};

struct SeqTrainConfig {
  NetMode mode = NetMode::uni;
  int n_streams = 40;
  int segment_len = 20;
  int nc = 22;
  int nr = 21;
  int nl = 22;
  double lr = 2e-6;          // per-sample by default, the recurrent recipe value
  bool lr_per_sample = true;
  double kappa = 0.2;        // acoustic scale
  int pool_capacity = 40;    // utterances pooled per cycle
  long pool_frame_budget = 1000000;
  bool max_norm = true;      // mirror the cross-entropy regularizer
  double max_norm_cap = 1.0;
  bool dropout = false;
  DropoutSchedule dropout_schedule{};
  int epoch_index = 0;
  uint64_t dropout_seed = 1;

  PackerConfig packer_config() const {
    return make_packer_config(mode, n_streams, segment_len, nc, nr, nl);
  }
};

// Everything the second pass needs to revisit the first pass's minibatches.
struct PoolCycle {
  SequencePool pool;
  Packer packer_start;
  RngStream dropout_start;
  int n_minibatches = 0;
  std::vector<uint64_t> checksums;
};

// First forward pass of a cycle: params are read-only; the live packer and
// dropout stream advance to the end of the cycle.
inline PoolCycle pool_pass(const StackSpec& spec, const StackParams& params, const Dataset& data,
                           Packer& packer, RngStream& dropout_rng, const SeqTrainConfig& cfg) {
  PoolCycle cycle{SequencePool{}, packer, dropout_rng, 0, {}};
  CarriedStates carried = make_carried(spec, cfg.n_streams);
  const double rate = cfg.dropout ? cfg.dropout_schedule.rate(cfg.epoch_index) : 0.0;

  ChunkBatch batch;
  while (packer.next(batch)) {
    const std::vector<DropoutMask> fwd_masks =
        detail::draw_masks(spec, params, false, rate, dropout_rng);
    const std::vector<DropoutMask> bwd_masks =
        spec.bidirectional ? detail::draw_masks(spec, params, true, rate, dropout_rng)
                           : std::vector<DropoutMask>{};
    ChunkForward fwd = detail::batch_forward(spec, params, cfg.mode, batch, carried, &fwd_masks,
                                             spec.bidirectional ? &bwd_masks : nullptr);
    cycle.checksums.push_back(batch_checksum(batch));
    ++cycle.n_minibatches;

    for (size_t s = 0; s < batch.streams.size(); ++s) {
      const auto& stream = batch.streams[s];
      if (!stream.active) continue;
      SequencePool::Entry* entry = cycle.pool.find(stream.utt_id);
      if (entry == nullptr) {
        const int utt_len = data.utts[stream.utt_id].length();
        require(utt_len <= cfg.pool_frame_budget,
                "pool_pass: utterance longer than the pool memory budget");
        cycle.pool.entries.push_back(SequencePool::Entry{stream.utt_id, {}, utt_len});
        entry = &cycle.pool.entries.back();
        entry->loglikes.reserve(utt_len);
      }
      require(static_cast<int>(entry->loglikes.size()) == stream.utt_pos,
              "pool_pass: frames arrived out of order");
      const StackActivations& acts = *fwd.streams[s];
      for (int t = 0; t < stream.valid_count(); ++t) entry->loglikes.push_back(acts.log_post[t]);
    }
  }
  for (const auto& e : cycle.pool.entries)
    require(e.complete(), "pool_pass: cycle ended with an incomplete utterance");
  return cycle;
}

struct UttSignal {
  std::vector<Vector> signal;  // d E[acc] / d loglike, per frame
  double expected_accuracy = 0.0;
};

inline std::map<int, UttSignal> compute_pool_signals(const SequencePool& pool,
                                                     const DecodingGraph& graph, double kappa) {
  std::map<int, UttSignal> out;
  for (const auto& e : pool.entries) {
    require(e.utt_id < static_cast<int>(graph.numerators.size()) &&
                !graph.numerators[e.utt_id].empty(),
            "compute_pool_signals: graph has no numerator for a pooled utterance");
    SmbrResult r = smbr_error_signal(graph, e.loglikes, graph.numerators[e.utt_id], kappa);
    out[e.utt_id] = UttSignal{std::move(r.error_signal), r.expected_accuracy};
  }
  return out;
}

// Second pass: replays the cycle's minibatches from the snapshots and
// applies one update per minibatch. The objective is maximized, so the
// injected output-layer gradient is the negated accuracy gradient.
inline void replay_pass(const StackSpec& spec, StackParams& params, const Dataset& data,
                        const PoolCycle& cycle, const std::map<int, UttSignal>& signals,
                        const SeqTrainConfig& cfg) {
  (void)data;
  Packer packer = cycle.packer_start;
  RngStream dropout_rng = cycle.dropout_start;
  CarriedStates carried = make_carried(spec, cfg.n_streams);
  const double rate = cfg.dropout ? cfg.dropout_schedule.rate(cfg.epoch_index) : 0.0;
  StackParams grads = make_stack_params(spec);

  ChunkBatch batch;
  for (int mb = 0; mb < cycle.n_minibatches; ++mb) {
    require(packer.next(batch), "replay_pass: packer ran dry during replay");
    if (batch_checksum(batch) != cycle.checksums[mb])
      throw ReplayDivergence("replay_pass: minibatch " + std::to_string(mb) +
                             " differs from the pooled pass");
    const std::vector<DropoutMask> fwd_masks =
        detail::draw_masks(spec, params, false, rate, dropout_rng);
    const std::vector<DropoutMask> bwd_masks =
        spec.bidirectional ? detail::draw_masks(spec, params, true, rate, dropout_rng)
                           : std::vector<DropoutMask>{};
    ChunkForward fwd = detail::batch_forward(spec, params, cfg.mode, batch, carried, &fwd_masks,
                                             spec.bidirectional ? &bwd_masks : nullptr);

    long n_valid = 0;
    for (const auto& s : batch.streams)
      if (s.active) n_valid += s.valid_count();
    if (n_valid == 0) continue;
    const double inv = cfg.lr_per_sample ? 1.0 : 1.0 / static_cast<double>(n_valid);

    std::vector<std::vector<Vector>> dlogits(batch.streams.size());
    for (size_t s = 0; s < batch.streams.size(); ++s) {
      const auto& stream = batch.streams[s];
      if (!stream.active) continue;
      const auto it = signals.find(stream.utt_id);
      require(it != signals.end(), "replay_pass: missing error signal for an utterance");
      const StackActivations& acts = *fwd.streams[s];
      dlogits[s].resize(stream.valid_count());
      for (int t = 0; t < stream.valid_count(); ++t) {
        const Vector& sig = it->second.signal[stream.utt_pos + t];
        Vector dll(sig.dim());
        for (int k = 0; k < sig.dim(); ++k) dll[k] = -inv * sig[k];
        dlogits[s][t] = dlogits_from_dloglike(acts.post[t], dll);
      }
    }

    for (auto& ref : collect_tensors(grads))
      for (size_t i = 0; i < ref.size; ++i) ref.data[i] = 0.0;
    backward_lc_chunk(spec, params, fwd, dlogits, grads);
    axpy_params(params, -cfg.lr, grads);
    if (cfg.max_norm) apply_max_norm(params, cfg.max_norm_cap);
  }
}

struct SeqEpochResult {
  double mean_expected_accuracy = 0.0;  // per-frame, averaged over utterances
  int n_utts = 0;
  int n_cycles = 0;
};

// Pool -> signal -> replay until the data is exhausted. The reported
// accuracy is measured at each cycle's pooling parameters.
inline SeqEpochResult train_sequence_epoch(const StackSpec& spec, StackParams& params,
                                           const Dataset& data, const DecodingGraph& graph,
                                           const SeqTrainConfig& cfg) {
  require(cfg.pool_capacity >= 1, "train_sequence_epoch: pool capacity must be >= 1");
  Packer packer(data, cfg.packer_config(), 0);
  RngStream dropout_rng(cfg.dropout_seed);

  SeqEpochResult res;
  while (true) {
    packer.extend_budget(cfg.pool_capacity);
    PoolCycle cycle = pool_pass(spec, params, data, packer, dropout_rng, cfg);
    if (cycle.pool.entries.empty()) break;
    std::map<int, UttSignal> signals = compute_pool_signals(cycle.pool, graph, cfg.kappa);
    for (const auto& e : cycle.pool.entries) {
      res.mean_expected_accuracy +=
          signals[e.utt_id].expected_accuracy / static_cast<double>(e.expected_length);
      ++res.n_utts;
    }
    replay_pass(spec, params, data, cycle, signals, cfg);
    ++res.n_cycles;
  }
  require(res.n_utts > 0, "train_sequence_epoch: no data");
  res.mean_expected_accuracy /= static_cast<double>(res.n_utts);
  return res;
}

// Inference-mode expected accuracy of the current parameters, per-frame
// normalized and averaged over utterances.
inline double mean_expected_accuracy(const StackSpec& spec, const StackParams& params,
                                     const Dataset& data, const DecodingGraph& graph,
                                     double kappa, NetMode mode, int nc = 22, int nr = 21,
                                     int nl = 22) {
  require(!data.utts.empty(), "mean_expected_accuracy: no data");
  double sum = 0.0;
  for (int u = 0; u < data.n_utts(); ++u) {
    const auto& utt = data.utts[u];
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
    require(u < static_cast<int>(graph.numerators.size()) && !graph.numerators[u].empty(),
            "mean_expected_accuracy: graph has no numerator for an utterance");
    SmbrResult r = smbr_error_signal(graph, log_post, graph.numerators[u], kappa);
    sum += r.expected_accuracy / static_cast<double>(utt.length());
  }
  return sum / static_cast<double>(data.n_utts());
}

}  // namespace hlstm
