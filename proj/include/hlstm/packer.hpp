#pragma once

#include "hlstm/data.hpp"
#include "hlstm/network.hpp"

// Packs utterances from a FIFO queue into fixed-size parallel-stream
// minibatches. Each utterance belongs to exactly one stream and its frames
// are consumed in order; a stream whose utterance ends mid-chunk carries a
// masked (short) tail and is refilled only at the next chunk boundary,
// starting from a zeroed state. The admission budget caps how many
// utterances may enter streams; pooled sequence training raises it once per
// cycle so a cycle drains completely before new sequences start.

namespace hlstm {

struct PackerConfig {
  int n_streams = 40;
  int segment_len = 20;  // main frames per chunk (N_c in chunked modes)
  int nr = 0;            // appended future context frames (lc / csc)
  int nl = 0;            // recomputed left context frames (csc)
  bool whole_utterance = false;  // full-sequence mode: one utterance per chunk
};

class Packer {
 public:
  Packer(const Dataset& data, const PackerConfig& cfg, long admission_budget = -1)
      : data_(&data), cfg_(cfg), budget_(admission_budget) {
    require(cfg.n_streams >= 1, "packer: need at least one stream");
    require(cfg.whole_utterance || cfg.segment_len >= 1, "packer: segment_len must be >= 1");
    require(cfg.nr >= 0 && cfg.nl >= 0, "packer: negative context");
    streams_.resize(cfg.n_streams);
  }

  // Raises the admission budget by `n` utterances (no-op when unlimited).
  void extend_budget(long n) {
    if (budget_ >= 0) budget_ += n;
  }

  bool exhausted() const {
    if (next_utt_ < data_->n_utts()) return false;
    for (const auto& s : streams_)
      if (s.utt >= 0 && s.pos < data_->utts[s.utt].length()) return false;
    return true;
  }

  // Builds the next batch. Returns false when no stream has frames left
  // under the current admission budget (end of epoch or end of cycle).
  bool next(ChunkBatch& out) {
    out.streams.assign(streams_.size(), ChunkBatch::Stream{});
    out.segment_len = cfg_.segment_len;

    bool any = false;
    for (size_t s = 0; s < streams_.size(); ++s) {
      auto& cur = streams_[s];
      auto& slot = out.streams[s];

      const bool done = cur.utt < 0 || cur.pos >= data_->utts[cur.utt].length();
      if (done) {
        if (next_utt_ >= data_->n_utts() || (budget_ >= 0 && admitted_ >= budget_)) continue;
        cur.utt = next_utt_++;
        cur.pos = 0;
        ++admitted_;
        slot.fresh = true;
      } else {
        slot.fresh = cur.pos == 0;
      }

      const Utterance& utt = data_->utts[cur.utt];
      const int take = cfg_.whole_utterance
                           ? utt.length()
                           : std::min(cfg_.segment_len, utt.length() - cur.pos);
      slot.utt_id = cur.utt;
      slot.utt_pos = cur.pos;
      slot.frames.assign(utt.frames.begin() + cur.pos, utt.frames.begin() + cur.pos + take);
      slot.labels.assign(utt.labels.begin() + cur.pos, utt.labels.begin() + cur.pos + take);
      const int fut = std::min(cfg_.nr, utt.length() - cur.pos - take);
      slot.future.assign(utt.frames.begin() + cur.pos + take,
                         utt.frames.begin() + cur.pos + take + fut);
      const int lo = std::max(0, cur.pos - cfg_.nl);
      slot.left.assign(utt.frames.begin() + lo, utt.frames.begin() + cur.pos);
      slot.active = true;
      cur.pos += take;
      any = true;
    }
    return any;
  }

 private:
  struct StreamCursor {
    int utt = -1;
    int pos = 0;
  };

  const Dataset* data_;
  PackerConfig cfg_;
  std::vector<StreamCursor> streams_;
  int next_utt_ = 0;
  long admitted_ = 0;
  long budget_ = -1;
};

// Bitwise fingerprint of a batch's content and packing; the two-pass replay
// recomputes it to prove the second pass revisits identical minibatches.
inline uint64_t batch_checksum(const ChunkBatch& batch) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& s : batch.streams) {
    const int64_t meta[3] = {s.utt_id, s.utt_pos, s.active ? s.valid_count() : -1};
    h = fnv1a(meta, sizeof(meta), h);
    for (const auto& f : s.frames) h = fnv1a(f, h);
    for (const auto& f : s.future) h = fnv1a(f, h);
    if (!s.labels.empty()) h = fnv1a(s.labels.data(), s.labels.size() * sizeof(int), h);
  }
  return h;
}

}  // namespace hlstm
