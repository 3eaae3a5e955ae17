#pragma once

#include <cstring>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hlstm/cells.hpp"

// Deep stacks of (highway-)LSTM(P) layers with three evaluation regimes:
//
//   full   : whole-utterance recurrence, both directions where bidirectional
//   lc     : chunked, exact carried left history, future context truncated
//            to the chunk's appended right frames
//   csc    : chunked with recomputed left and right context frames and zero
//            states at both window edges
//
// A bidirectional layer holds separate forward and backward sub-layers; per
// frame their outputs are concatenated to feed the next layer. Highway
// connections link same-direction cells of adjacent layers. The head is
// affine + softmax over output classes.

namespace hlstm {

enum class LayerKind { lstm, highway_lstm };

struct LayerSpec {
  LayerKind kind = LayerKind::lstm;
  int cell_dim = 0;
  int proj_dim = 0;  // 0 = no projection, the layer outputs the cell output itself
};

struct StackSpec {
  int input_dim = 0;
  int output_dim = 0;  // softmax classes
  bool bidirectional = false;
  std::vector<LayerSpec> layers;

  int n_layers() const { return static_cast<int>(layers.size()); }
  int dir_count() const { return bidirectional ? 2 : 1; }
  int layer_out_dim(int l) const {
    return layers[l].proj_dim > 0 ? layers[l].proj_dim : layers[l].cell_dim;
  }
  int layer_input_dim(int l) const {
    return l == 0 ? input_dim : dir_count() * layer_out_dim(l - 1);
  }
  int top_dim() const { return dir_count() * layer_out_dim(n_layers() - 1); }

  void check() const {
    require(input_dim > 0, "stack spec: input_dim must be positive");
    require(output_dim > 0, "stack spec: output_dim must be positive");
    require(!layers.empty(), "stack spec: no layers");
    for (int l = 0; l < n_layers(); ++l) {
      require(layers[l].cell_dim > 0, "stack spec: cell_dim must be positive");
      require(layers[l].proj_dim >= 0, "stack spec: proj_dim must be >= 0");
      if (layers[l].kind == LayerKind::highway_lstm) {
        require(l > 0, "stack spec: first layer cannot be a highway layer");
        require(layers[l - 1].cell_dim == layers[l].cell_dim,
                "stack spec: highway layer needs matching lower cell_dim");
      }
    }
  }
};

struct DirectionParams {
  LstmLayerParams cell;
  HighwayParams highway;
  bool has_highway = false;
};

struct LayerParams {
  DirectionParams fwd;
  DirectionParams bwd;  // unused when unidirectional
};

struct StackParams {
  std::vector<LayerParams> layers;
  Matrix W_out;
  Vector b_out;
};

inline DirectionParams make_direction_params(const StackSpec& spec, int l) {
  DirectionParams dp;
  dp.cell = make_lstm_params(spec.layer_input_dim(l), spec.layers[l].cell_dim,
                             spec.layers[l].proj_dim);
  if (spec.layers[l].kind == LayerKind::highway_lstm) {
    dp.highway = make_highway_params(spec.layer_input_dim(l), spec.layers[l].cell_dim);
    dp.has_highway = true;
  }
  return dp;
}

inline StackParams make_stack_params(const StackSpec& spec) {
  spec.check();
  StackParams p;
  p.layers.resize(spec.layers.size());
  for (int l = 0; l < spec.n_layers(); ++l) {
    p.layers[l].fwd = make_direction_params(spec, l);
    if (spec.bidirectional) p.layers[l].bwd = make_direction_params(spec, l);
  }
  p.W_out = Matrix(spec.output_dim, spec.top_dim());
  p.b_out = Vector(spec.output_dim);
  return p;
}

inline StackParams init_stack_params(const StackSpec& spec, RngStream& rng, double scale = 0.05) {
  StackParams p = make_stack_params(spec);
  for (auto& layer : p.layers) {
    init_lstm_params(layer.fwd.cell, rng, scale);
    if (layer.fwd.has_highway) init_highway_params(layer.fwd.highway, rng, scale);
    if (spec.bidirectional) {
      init_lstm_params(layer.bwd.cell, rng, scale);
      if (layer.bwd.has_highway) init_highway_params(layer.bwd.highway, rng, scale);
    }
  }
  fill_uniform(p.W_out, rng, scale);
  return p;
}

// ---------------------------------------------------------------------------
// Flat tensor directory. Ordering is fixed, which makes serialization,
// SGD updates and finite-difference sweeps line up across parameter sets
// with the same shape.
// ---------------------------------------------------------------------------

enum class TensorKind {
  input_weight,
  recurrent_weight,
  peephole,
  bias,
  projection,
  output_weight,
  output_bias
};

struct TensorRef {
  std::string name;
  TensorKind kind;
  bool is_matrix = false;
  int rows = 0;
  int cols = 0;
  double* data = nullptr;
  size_t size = 0;
};

namespace detail {

inline void push_tensor(std::vector<TensorRef>& out, const std::string& name, TensorKind kind,
                        Matrix& m) {
  if (m.empty()) return;
  out.push_back(TensorRef{name, kind, true, m.rows, m.cols, m.data.data(), m.size()});
}

inline void push_tensor(std::vector<TensorRef>& out, const std::string& name, TensorKind kind,
                        Vector& v) {
  out.push_back(
      TensorRef{name, kind, false, v.dim(), 1, v.data.data(), static_cast<size_t>(v.dim())});
}

inline void collect_direction(std::vector<TensorRef>& out, const std::string& prefix,
                              DirectionParams& dp) {
  auto& c = dp.cell;
  push_tensor(out, prefix + ".W_xi", TensorKind::input_weight, c.W_xi);
  push_tensor(out, prefix + ".W_xf", TensorKind::input_weight, c.W_xf);
  push_tensor(out, prefix + ".W_xc", TensorKind::input_weight, c.W_xc);
  push_tensor(out, prefix + ".W_xo", TensorKind::input_weight, c.W_xo);
  push_tensor(out, prefix + ".W_mi", TensorKind::recurrent_weight, c.W_mi);
  push_tensor(out, prefix + ".W_mf", TensorKind::recurrent_weight, c.W_mf);
  push_tensor(out, prefix + ".W_mc", TensorKind::recurrent_weight, c.W_mc);
  push_tensor(out, prefix + ".W_mo", TensorKind::recurrent_weight, c.W_mo);
  push_tensor(out, prefix + ".w_ci", TensorKind::peephole, c.w_ci);
  push_tensor(out, prefix + ".w_cf", TensorKind::peephole, c.w_cf);
  push_tensor(out, prefix + ".w_co", TensorKind::peephole, c.w_co);
  push_tensor(out, prefix + ".b_i", TensorKind::bias, c.b_i);
  push_tensor(out, prefix + ".b_f", TensorKind::bias, c.b_f);
  push_tensor(out, prefix + ".b_c", TensorKind::bias, c.b_c);
  push_tensor(out, prefix + ".b_o", TensorKind::bias, c.b_o);
  push_tensor(out, prefix + ".W_proj", TensorKind::projection, c.W_proj);
  if (dp.has_highway) {
    push_tensor(out, prefix + ".W_xd", TensorKind::input_weight, dp.highway.W_xd);
    push_tensor(out, prefix + ".w_cd", TensorKind::peephole, dp.highway.w_cd);
    push_tensor(out, prefix + ".w_ld", TensorKind::peephole, dp.highway.w_ld);
    push_tensor(out, prefix + ".b_d", TensorKind::bias, dp.highway.b_d);
  }
}

}  // namespace detail

inline std::vector<TensorRef> collect_tensors(StackParams& p) {
  std::vector<TensorRef> out;
  for (size_t l = 0; l < p.layers.size(); ++l) {
    const std::string base = "layer" + std::to_string(l);
    detail::collect_direction(out, base + ".fwd", p.layers[l].fwd);
    if (!p.layers[l].bwd.cell.W_xi.empty())
      detail::collect_direction(out, base + ".bwd", p.layers[l].bwd);
  }
  detail::push_tensor(out, "out.W", TensorKind::output_weight, p.W_out);
  detail::push_tensor(out, "out.b", TensorKind::output_bias, p.b_out);
  return out;
}

// dst += a * src, over all tensors
inline void axpy_params(StackParams& dst, double a, const StackParams& src) {
  auto d = collect_tensors(dst);
  auto s = collect_tensors(const_cast<StackParams&>(src));  // read-only access
  require(d.size() == s.size(), "axpy_params: shape mismatch");
  for (size_t i = 0; i < d.size(); ++i) {
    require(d[i].size == s[i].size, "axpy_params: tensor size mismatch");
    for (size_t j = 0; j < d[i].size; ++j) d[i].data[j] += a * s[i].data[j];
  }
}

inline uint64_t params_checksum(const StackParams& p) {
  auto refs = collect_tensors(const_cast<StackParams&>(p));
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& r : refs) h = fnv1a(r.data, r.size * sizeof(double), h);
  return h;
}

inline size_t count_scalars(const StackParams& p) {
  size_t n = 0;
  for (const auto& r : collect_tensors(const_cast<StackParams&>(p))) n += r.size;
  return n;
}

// ---------------------------------------------------------------------------
// Softmax head helpers
// ---------------------------------------------------------------------------

inline Vector log_softmax(const Vector& logits) {
  double mx = logits[0];
  for (int i = 1; i < logits.dim(); ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (int i = 0; i < logits.dim(); ++i) z += std::exp(logits[i] - mx);
  const double lz = mx + std::log(z);
  Vector out(logits.dim());
  for (int i = 0; i < logits.dim(); ++i) out[i] = logits[i] - lz;
  return out;
}

// cross-entropy of one labelled frame: d loss / d logits = post - onehot
inline Vector dlogits_from_ce(const Vector& post, int label) {
  Vector d = post;
  d[label] -= 1.0;
  return d;
}

// generic loss given as gradient w.r.t. posterior probabilities
inline Vector dlogits_from_dpost(const Vector& post, const Vector& dpost) {
  require(post.dim() == dpost.dim(), "dlogits_from_dpost: dim mismatch");
  double s = 0.0;
  for (int i = 0; i < post.dim(); ++i) s += dpost[i] * post[i];
  Vector d(post.dim());
  for (int i = 0; i < post.dim(); ++i) d[i] = post[i] * (dpost[i] - s);
  return d;
}

// loss given as gradient w.r.t. log posteriors
inline Vector dlogits_from_dloglike(const Vector& post, const Vector& dll) {
  require(post.dim() == dll.dim(), "dlogits_from_dloglike: dim mismatch");
  double s = 0.0;
  for (int i = 0; i < dll.dim(); ++i) s += dll[i];
  Vector d(post.dim());
  for (int i = 0; i < post.dim(); ++i) d[i] = dll[i] - post[i] * s;
  return d;
}

// ---------------------------------------------------------------------------
// Stack forward/backward over one contiguous window of frames
// ---------------------------------------------------------------------------

struct SubLayerRun {
  std::vector<StepTape> tapes;  // indexed by window frame
  std::vector<Vector> out;
};

struct LayerRun {
  SubLayerRun fwd;
  SubLayerRun bwd;
};

// Activations plus everything the backward pass replays.
struct StackActivations {
  std::vector<LayerRun> layers;
  std::vector<Vector> head_in;   // concat top output, all window frames
  std::vector<Vector> log_post;  // output frames only
  std::vector<Vector> post;
  int out_begin = 0;
  int n_frames = 0;
  uint64_t stack_macs = 0;  // matrix MACs spent in the recurrent stack
  uint64_t head_macs = 0;   // matrix MACs spent in the affine head
};

struct ForwardOptions {
  const std::vector<LayerState>* carried = nullptr;       // per layer, fwd direction
  const std::vector<DropoutMask>* fwd_masks = nullptr;    // per layer, highway dropout
  const std::vector<DropoutMask>* bwd_masks = nullptr;
  int out_begin = 0;
  int out_count = -1;  // -1 = through the end of the window
};

namespace detail {

inline SubLayerRun run_sublayer(const DirectionParams& dp, const std::vector<Vector>& inputs,
                                bool reverse, const LayerState& init, const SubLayerRun* lower,
                                const DropoutMask& mask) {
  const int T = static_cast<int>(inputs.size());
  SubLayerRun run;
  run.tapes.resize(T);
  run.out.resize(T);
  LayerState st = init;
  for (int step = 0; step < T; ++step) {
    const int t = reverse ? T - 1 - step : step;
    StepResult r = dp.has_highway
                       ? highway_step(dp.cell, dp.highway, inputs[t], st, lower->tapes[t].c, mask)
                       : lstm_step(dp.cell, inputs[t], st);
    st = r.state;
    run.tapes[t] = std::move(r.tape);
    run.out[t] = std::move(r.y);
  }
  return run;
}

}  // namespace detail

inline StackActivations stack_forward(const StackSpec& spec, const StackParams& params,
                                      const std::vector<Vector>& window,
                                      const ForwardOptions& opt = {}) {
  require(!window.empty(), "stack_forward: empty window");
  const int T = static_cast<int>(window.size());
  const int L = spec.n_layers();
  const int out_count = opt.out_count < 0 ? T - opt.out_begin : opt.out_count;
  require(opt.out_begin >= 0 && opt.out_begin + out_count <= T, "stack_forward: bad output range");

  StackActivations acts;
  acts.layers.resize(L);
  acts.out_begin = opt.out_begin;
  acts.n_frames = T;

  const uint64_t mac0 = mac_read();
  std::vector<Vector> inputs = window;
  for (int l = 0; l < L; ++l) {
    const auto& lp = params.layers[l];
    const LayerState zero =
        zero_state(spec.layers[l].cell_dim, spec.layer_out_dim(l));
    const LayerState& init = opt.carried != nullptr ? (*opt.carried)[l] : zero;
    const DropoutMask idmask = DropoutMask::identity(spec.layers[l].cell_dim);
    const DropoutMask& fmask = opt.fwd_masks != nullptr ? (*opt.fwd_masks)[l] : idmask;
    const SubLayerRun* lower_f = (l > 0 && lp.fwd.has_highway) ? &acts.layers[l - 1].fwd : nullptr;
    acts.layers[l].fwd = detail::run_sublayer(lp.fwd, inputs, false, init, lower_f, fmask);

    if (spec.bidirectional) {
      const DropoutMask& bmask = opt.bwd_masks != nullptr ? (*opt.bwd_masks)[l] : idmask;
      const SubLayerRun* lower_b =
          (l > 0 && lp.bwd.has_highway) ? &acts.layers[l - 1].bwd : nullptr;
      acts.layers[l].bwd = detail::run_sublayer(lp.bwd, inputs, true, zero, lower_b, bmask);
    }

    std::vector<Vector> next(T);
    for (int t = 0; t < T; ++t) {
      if (!spec.bidirectional) {
        next[t] = acts.layers[l].fwd.out[t];
      } else {
        const Vector& a = acts.layers[l].fwd.out[t];
        const Vector& b = acts.layers[l].bwd.out[t];
        Vector cat(a.dim() + b.dim());
        std::memcpy(cat.data.data(), a.data.data(), a.data.size() * sizeof(double));
        std::memcpy(cat.data.data() + a.dim(), b.data.data(), b.data.size() * sizeof(double));
        next[t] = std::move(cat);
      }
    }
    inputs = std::move(next);
  }
  acts.head_in = std::move(inputs);
  acts.stack_macs = mac_read() - mac0;

  acts.log_post.resize(out_count);
  acts.post.resize(out_count);
  for (int j = 0; j < out_count; ++j) {
    Vector logits = matvec(params.W_out, acts.head_in[opt.out_begin + j]);
    add_in_place(logits, params.b_out);
    acts.log_post[j] = log_softmax(logits);
    Vector post(logits.dim());
    for (int k = 0; k < logits.dim(); ++k) post[k] = std::exp(acts.log_post[j][k]);
    acts.post[j] = std::move(post);
  }
  acts.head_macs = mac_read() - mac0 - acts.stack_macs;
  return acts;
}

namespace detail {

inline void bptt_sublayer(const DirectionParams& dp, const SubLayerRun& run, bool reverse,
                          const std::vector<Vector>& dy, const std::vector<Vector>* dcell_extra,
                          DirectionParams& grads, std::vector<Vector>& dx_out,
                          std::vector<Vector>* dlower_out) {
  const int T = static_cast<int>(run.tapes.size());
  const int n = dp.cell.cell_dim();
  LayerState dstate = zero_state(n, dp.cell.output_dim());
  HighwayParams* hg = dp.has_highway ? &grads.highway : nullptr;
  const HighwayParams* hp = dp.has_highway ? &dp.highway : nullptr;
  for (int step = 0; step < T; ++step) {
    // walk opposite to the processing order so consumers come first
    const int t = reverse ? step : T - 1 - step;
    if (dcell_extra != nullptr) add_in_place(dstate.c, (*dcell_extra)[t]);
    StepBackResult res =
        lstm_step_backward(dp.cell, hp, run.tapes[t], dstate, dy[t], grads.cell, hg);
    add_in_place(dx_out[t], res.dx);
    if (dp.has_highway) add_in_place((*dlower_out)[t], res.dlower_c);
    dstate = std::move(res.dprev);
  }
  // dstate now holds the gradient w.r.t. the window-initial state; dropped,
  // gradients never flow across chunk boundaries into carried states.
}

}  // namespace detail

// dlogits: one entry per output frame (acts.out_begin onward). Parameter
// gradients accumulate into grads; dframes, when given, receives the
// gradient w.r.t. each window input frame.
inline void stack_backward(const StackSpec& spec, const StackParams& params,
                           const StackActivations& acts, const std::vector<Vector>& dlogits,
                           StackParams& grads, std::vector<Vector>* dframes = nullptr) {
  const int T = acts.n_frames;
  const int L = spec.n_layers();
  require(static_cast<int>(dlogits.size()) == static_cast<int>(acts.post.size()),
          "stack_backward: dlogits count mismatch");
  require(static_cast<int>(grads.layers.size()) == L, "stack_backward: grads shape mismatch");

  std::vector<Vector> d_out(T, Vector(spec.top_dim()));
  for (size_t j = 0; j < dlogits.size(); ++j) {
    const int t = acts.out_begin + static_cast<int>(j);
    add_outer(grads.W_out, dlogits[j], acts.head_in[t]);
    add_in_place(grads.b_out, dlogits[j]);
    add_in_place(d_out[t], matvec_t(params.W_out, dlogits[j]));
  }

  std::vector<Vector> extra_fwd, extra_bwd;  // highway cell grads from the layer above
  for (int l = L - 1; l >= 0; --l) {
    const auto& lp = params.layers[l];
    const int od = spec.layer_out_dim(l);
    const int in_dim = spec.layer_input_dim(l);

    std::vector<Vector> dy_fwd(T, Vector(od)), dy_bwd;
    if (spec.bidirectional) dy_bwd.assign(T, Vector(od));
    for (int t = 0; t < T; ++t) {
      for (int k = 0; k < od; ++k) dy_fwd[t][k] = d_out[t][k];
      if (spec.bidirectional)
        for (int k = 0; k < od; ++k) dy_bwd[t][k] = d_out[t][od + k];
    }

    std::vector<Vector> dx(T, Vector(in_dim));
    std::vector<Vector> dlow_fwd, dlow_bwd;
    const bool feeds_lower = lp.fwd.has_highway;  // both directions share the kind
    if (feeds_lower) {
      dlow_fwd.assign(T, Vector(spec.layers[l - 1].cell_dim));
      if (spec.bidirectional) dlow_bwd.assign(T, Vector(spec.layers[l - 1].cell_dim));
    }

    detail::bptt_sublayer(lp.fwd, acts.layers[l].fwd, false, dy_fwd,
                          extra_fwd.empty() ? nullptr : &extra_fwd,
                          grads.layers[l].fwd, dx, feeds_lower ? &dlow_fwd : nullptr);
    if (spec.bidirectional) {
      detail::bptt_sublayer(lp.bwd, acts.layers[l].bwd, true, dy_bwd,
                            extra_bwd.empty() ? nullptr : &extra_bwd,
                            grads.layers[l].bwd, dx, feeds_lower ? &dlow_bwd : nullptr);
    }

    extra_fwd = std::move(dlow_fwd);
    extra_bwd = std::move(dlow_bwd);
    if (l > 0) {
      d_out = std::move(dx);
    } else if (dframes != nullptr) {
      *dframes = std::move(dx);
    }
  }
}

// ---------------------------------------------------------------------------
// Whole-utterance and chunked entry points
// ---------------------------------------------------------------------------

inline StackActivations forward_full(const StackSpec& spec, const StackParams& params,
                                     const std::vector<Vector>& utterance,
                                     const ForwardOptions& opt = {}) {
  require(!utterance.empty(), "forward_full: empty utterance");
  return stack_forward(spec, params, utterance, opt);
}

inline void backward_full(const StackSpec& spec, const StackParams& params,
                          const StackActivations& acts, const std::vector<Vector>& dlogits,
                          StackParams& grads, std::vector<Vector>* dframes = nullptr) {
  stack_backward(spec, params, acts, dlogits, grads, dframes);
}

// Fixed-size block of frames from parallel utterance streams. Frames of a
// stream are always a valid prefix; a stream whose utterance is exhausted
// carries fewer than segment_len frames (the tail is the masked-invalid
// region) and goes inactive once it has none.
struct ChunkBatch {
  struct Stream {
    std::vector<Vector> frames;  // main frames, valid prefix of the segment
    std::vector<Vector> future;  // appended right context (lc), valid frames only
    std::vector<Vector> left;    // recomputed left context (csc), clamped at the utterance edge
    std::vector<int> labels;     // one per main frame
    int utt_id = -1;
    int utt_pos = 0;  // offset of frames[0] within the utterance
    bool fresh = true;
    bool active = false;
    int valid_count() const { return static_cast<int>(frames.size()); }
  };
  std::vector<Stream> streams;
  int segment_len = 0;
};

using CarriedStates = std::vector<std::vector<LayerState>>;  // [stream][layer]

inline std::vector<LayerState> zero_layer_states(const StackSpec& spec) {
  std::vector<LayerState> st(spec.n_layers());
  for (int l = 0; l < spec.n_layers(); ++l)
    st[l] = zero_state(spec.layers[l].cell_dim, spec.layer_out_dim(l));
  return st;
}

inline CarriedStates make_carried(const StackSpec& spec, int n_streams) {
  return CarriedStates(n_streams, zero_layer_states(spec));
}

struct ChunkForward {
  std::vector<std::optional<StackActivations>> streams;
  uint64_t stack_macs = 0;
  uint64_t head_macs = 0;
};

// Latency-controlled chunk: forward direction resumes from the carried
// states and re-emits them at the last main frame; the backward direction
// starts from zero at the right edge of the appended future context.
// Posteriors cover the main frames only.
inline ChunkForward forward_lc_chunk(const StackSpec& spec, const StackParams& params,
                                     const ChunkBatch& batch, CarriedStates& carried,
                                     const std::vector<DropoutMask>* fwd_masks = nullptr,
                                     const std::vector<DropoutMask>* bwd_masks = nullptr) {
  require(carried.size() == batch.streams.size(), "forward_lc_chunk: carried/stream mismatch");
  ChunkForward out;
  out.streams.resize(batch.streams.size());
  for (size_t s = 0; s < batch.streams.size(); ++s) {
    const auto& stream = batch.streams[s];
    if (!stream.active || stream.frames.empty()) continue;
    if (stream.fresh) carried[s] = zero_layer_states(spec);

    std::vector<Vector> window = stream.frames;
    window.insert(window.end(), stream.future.begin(), stream.future.end());

    ForwardOptions opt;
    opt.carried = &carried[s];
    opt.fwd_masks = fwd_masks;
    opt.bwd_masks = bwd_masks;
    opt.out_begin = 0;
    opt.out_count = stream.valid_count();
    StackActivations acts = stack_forward(spec, params, window, opt);

    const int carry_at = stream.valid_count() - 1;
    for (int l = 0; l < spec.n_layers(); ++l) {
      carried[s][l] =
          LayerState{acts.layers[l].fwd.tapes[carry_at].c, acts.layers[l].fwd.out[carry_at]};
    }
    out.stack_macs += acts.stack_macs;
    out.head_macs += acts.head_macs;
    out.streams[s] = std::move(acts);
  }
  return out;
}

// Per-stream gradients; dlogits_per_stream[s] aligns with the main frames
// of stream s. Accumulation order over streams is fixed.
inline void backward_lc_chunk(const StackSpec& spec, const StackParams& params,
                              const ChunkForward& fwd,
                              const std::vector<std::vector<Vector>>& dlogits_per_stream,
                              StackParams& grads) {
  require(dlogits_per_stream.size() == fwd.streams.size(),
          "backward_lc_chunk: stream count mismatch");
  for (size_t s = 0; s < fwd.streams.size(); ++s) {
    if (!fwd.streams[s].has_value()) continue;
    stack_backward(spec, params, *fwd.streams[s], dlogits_per_stream[s], grads);
  }
}

// Context-sensitive chunk: both directions start from zero state at the
// window edges; left and right context frames generate no output.
inline StackActivations csc_chunk_forward(const StackSpec& spec, const StackParams& params,
                                          const ChunkBatch::Stream& stream,
                                          const std::vector<DropoutMask>* fwd_masks = nullptr,
                                          const std::vector<DropoutMask>* bwd_masks = nullptr) {
  require(stream.active && !stream.frames.empty(), "csc_chunk_forward: empty chunk");
  std::vector<Vector> window = stream.left;
  window.insert(window.end(), stream.frames.begin(), stream.frames.end());
  window.insert(window.end(), stream.future.begin(), stream.future.end());
  ForwardOptions opt;
  opt.fwd_masks = fwd_masks;
  opt.bwd_masks = bwd_masks;
  opt.out_begin = static_cast<int>(stream.left.size());
  opt.out_count = stream.valid_count();
  return stack_forward(spec, params, window, opt);
}

// Chunked inference over one whole utterance (inference-mode dropout).
// Returns per-frame log posteriors for all T frames.
inline std::vector<Vector> lc_forward_utterance(const StackSpec& spec, const StackParams& params,
                                                const std::vector<Vector>& frames, int nc, int nr) {
  require(nc >= 1 && nr >= 0, "lc_forward_utterance: bad chunk sizes");
  const int T = static_cast<int>(frames.size());
  std::vector<Vector> log_post;
  log_post.reserve(T);
  CarriedStates carried = make_carried(spec, 1);
  for (int pos = 0; pos < T; pos += nc) {
    ChunkBatch batch;
    batch.segment_len = nc;
    batch.streams.resize(1);
    auto& st = batch.streams[0];
    const int n_main = std::min(nc, T - pos);
    st.frames.assign(frames.begin() + pos, frames.begin() + pos + n_main);
    const int n_fut = std::min(nr, T - pos - n_main);
    st.future.assign(frames.begin() + pos + n_main, frames.begin() + pos + n_main + n_fut);
    st.fresh = pos == 0;
    st.active = true;
    ChunkForward fwd = forward_lc_chunk(spec, params, batch, carried);
    for (auto& lp : fwd.streams[0]->log_post) log_post.push_back(std::move(lp));
  }
  return log_post;
}

inline std::vector<Vector> csc_forward_utterance(const StackSpec& spec, const StackParams& params,
                                                 const std::vector<Vector>& frames, int nl, int nc,
                                                 int nr) {
  require(nc >= 1 && nr >= 0 && nl >= 0, "csc_forward_utterance: bad chunk sizes");
  const int T = static_cast<int>(frames.size());
  std::vector<Vector> log_post;
  log_post.reserve(T);
  for (int pos = 0; pos < T; pos += nc) {
    ChunkBatch::Stream st;
    const int n_main = std::min(nc, T - pos);
    st.frames.assign(frames.begin() + pos, frames.begin() + pos + n_main);
    const int n_fut = std::min(nr, T - pos - n_main);
    st.future.assign(frames.begin() + pos + n_main, frames.begin() + pos + n_main + n_fut);
    const int lo = std::max(0, pos - nl);  // context shrinks at the utterance edge
    st.left.assign(frames.begin() + lo, frames.begin() + pos);
    st.active = true;
    StackActivations acts = csc_chunk_forward(spec, params, st);
    for (auto& lp : acts.log_post) log_post.push_back(std::move(lp));
  }
  return log_post;
}

}  // namespace hlstm
