#pragma once

#include "hlstm/data.hpp"
#include "hlstm/graph.hpp"

// Synthetic frame-classification task. A latent Markov chain walks over
// `alphabet` hidden symbols; each frame emits a one-hot of the current
// symbol plus gaussian noise. The label at frame t is the clean hidden
// symbol context_k frames ahead:
//
//   label(t) = h(t + k),    h beyond the end clamped to symbol 0
//
// With k = 0 the label is the symbol itself; with k > 0 the label is
// determined by a future symbol, so models without access to future frames
// hit a hard accuracy ceiling set by the chain's predictability.

namespace hlstm {

struct SynthConfig {
  int alphabet = 6;
  int context_k = 0;
  double noise = 0.0;      // emission noise stddev
  double stay_prob = 0.5;  // hidden chain self-transition probability
  int min_len = 20;
  int max_len = 40;
};

inline Utterance synth_utterance(const SynthConfig& cfg, RngStream& rng) {
  require(cfg.alphabet >= 2, "synth: alphabet too small");
  require(cfg.context_k >= 0, "synth: negative context width");
  require(cfg.noise >= 0.0, "synth: negative noise");
  require(cfg.min_len >= 1 && cfg.max_len >= cfg.min_len, "synth: bad length range");

  const int t_len =
      cfg.min_len + static_cast<int>(rng.next_u64() % (cfg.max_len - cfg.min_len + 1));
  std::vector<int> hidden(t_len);
  hidden[0] = static_cast<int>(rng.next_u64() % cfg.alphabet);
  for (int t = 1; t < t_len; ++t) {
    if (rng.next_unit() < cfg.stay_prob) {
      hidden[t] = hidden[t - 1];
    } else {
      // jump to one of the other symbols
      int step = 1 + static_cast<int>(rng.next_u64() % (cfg.alphabet - 1));
      hidden[t] = (hidden[t - 1] + step) % cfg.alphabet;
    }
  }

  Utterance u;
  u.frames.resize(t_len);
  u.labels.resize(t_len);
  for (int t = 0; t < t_len; ++t) {
    Vector f = sample_gaussian(rng, cfg.alphabet, cfg.noise);
    if (cfg.noise == 0.0) f = Vector(cfg.alphabet);
    f[hidden[t]] += 1.0;
    u.frames[t] = std::move(f);

    const int src = t + cfg.context_k;
    u.labels[t] = src < t_len ? hidden[src] : 0;
  }
  return u;
}

inline Dataset synth_dataset(const SynthConfig& cfg, int n_utts, RngStream& rng) {
  require(n_utts >= 1, "synth: need at least one utterance");
  Dataset d;
  d.feature_dim = cfg.alphabet;
  d.n_classes = cfg.alphabet;
  d.utts.reserve(n_utts);
  for (int i = 0; i < n_utts; ++i) d.utts.push_back(synth_utterance(cfg, rng));
  d.check();
  return d;
}

// Decoding graph over the task's classes: one state per class, uniform
// transitions, numerators taken from the reference labels. The companion
// graph for sequence training on a synthesized set.
inline DecodingGraph make_label_graph(const Dataset& d) {
  DecodingGraph g;
  g.n_states = d.n_classes;
  g.labels.resize(d.n_classes);
  for (int s = 0; s < d.n_classes; ++s) g.labels[s] = s;
  g.trans = Matrix(d.n_classes, d.n_classes, 1.0 / d.n_classes);
  g.numerators.reserve(d.utts.size());
  for (const auto& u : d.utts) g.numerators.push_back(u.labels);
  g.check();
  return g;
}

}  // namespace hlstm
