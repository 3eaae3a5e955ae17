#pragma once

#include "hlstm/tensor.hpp"

// One-timestep forward and backward for LSTM, LSTMP and highway-LSTMP
// layers. Gate wiring:
//
//   i = sigmoid(W_xi x + W_mi r_prev + w_ci . c_prev + b_i)
//   f = sigmoid(W_xf x + W_mf r_prev + w_cf . c_prev + b_f)
//   g = tanh   (W_xc x + W_mc r_prev + b_c)
//   d = sigmoid(W_xd x + w_cd . c_prev + w_ld . lower_c + b_d)   (highway only)
//   c = f . c_prev + i . g  [+ d . mask . lower_c]
//   o = sigmoid(W_xo x + W_mo r_prev + w_co . c + b_o)
//   m = o . tanh(c)
//   r = W_proj m            (or m itself when the layer has no projection)
//
// The projected output r is both the layer output and the recurrent input
// of the next step. Peepholes (w_c*) and the carry-gate cell links (w_cd,
// w_ld) are diagonal. The dropout mask scales only the carried lower-layer
// cell term, with inverted 1/(1-p) scaling so inference uses the identity.

namespace hlstm {

struct LstmLayerParams {
  Matrix W_xi, W_xf, W_xc, W_xo;  // input -> gates/cell, cell_dim x input_dim
  Matrix W_mi, W_mf, W_mc, W_mo;  // recurrent -> gates/cell, cell_dim x recur_dim
  Vector w_ci, w_cf, w_co;        // diagonal peepholes, cell_dim
  Vector b_i, b_f, b_c, b_o;      // biases, cell_dim
  Matrix W_proj;                  // proj_dim x cell_dim; empty = no projection

  int input_dim() const { return W_xi.cols; }
  int cell_dim() const { return W_xi.rows; }
  int recur_dim() const { return W_mi.cols; }
  bool has_projection() const { return !W_proj.empty(); }
  int output_dim() const { return has_projection() ? W_proj.rows : cell_dim(); }

  void check() const {
    const int n = cell_dim();
    require(W_xf.rows == n && W_xc.rows == n && W_xo.rows == n, "lstm params: gate row mismatch");
    require(W_xf.cols == input_dim() && W_xc.cols == input_dim() && W_xo.cols == input_dim(),
            "lstm params: input col mismatch");
    require(W_mi.rows == n && W_mf.rows == n && W_mc.rows == n && W_mo.rows == n,
            "lstm params: recurrent row mismatch");
    const int rd = recur_dim();
    require(W_mf.cols == rd && W_mc.cols == rd && W_mo.cols == rd,
            "lstm params: recurrent col mismatch");
    require(w_ci.dim() == n && w_cf.dim() == n && w_co.dim() == n,
            "lstm params: peephole dim != cell_dim");
    require(b_i.dim() == n && b_f.dim() == n && b_c.dim() == n && b_o.dim() == n,
            "lstm params: bias dim != cell_dim");
    if (has_projection()) require(W_proj.cols == n, "lstm params: W_proj.cols != cell_dim");
    require(rd == output_dim(), "lstm params: recurrent input dim != output dim");
  }
};

struct HighwayParams {
  Matrix W_xd;  // cell_dim x input_dim
  Vector w_cd;  // diagonal, own past cell -> carry
  Vector w_ld;  // diagonal, lower-layer cell -> carry
  Vector b_d;

  int cell_dim() const { return W_xd.rows; }

  void check(int cell_dim, int input_dim) const {
    require(W_xd.rows == cell_dim && W_xd.cols == input_dim, "highway params: W_xd shape");
    require(w_cd.dim() == cell_dim && w_ld.dim() == cell_dim && b_d.dim() == cell_dim,
            "highway params: carry vector dims != cell_dim");
  }
};

// Per-layer recurrent carry across a time boundary.
struct LayerState {
  Vector c;  // cell state, cell_dim
  Vector r;  // projected recurrent output, output_dim
};

inline LayerState zero_state(int cell_dim, int out_dim) {
  return LayerState{Vector(cell_dim), Vector(out_dim)};
}

struct DropoutMask {
  Vector scale;  // entries 0 or 1/(1-rate)
  double rate = 0.0;

  static DropoutMask identity(int dim) { return DropoutMask{Vector(dim, 1.0), 0.0}; }
};

inline DropoutMask make_dropout_mask(RngStream& rng, int dim, double rate) {
  require(rate >= 0.0 && rate <= 1.0, "make_dropout_mask: rate outside [0,1]");
  DropoutMask m{Vector(dim), rate};
  if (rate == 0.0) {
    for (int i = 0; i < dim; ++i) m.scale[i] = 1.0;
    return m;
  }
  if (rate == 1.0) return m;  // all zero
  const double keep = 1.0 / (1.0 - rate);
  for (int i = 0; i < dim; ++i) m.scale[i] = rng.next_unit() < rate ? 0.0 : keep;
  return m;
}

// Everything the backward pass needs to replay one step.
struct StepTape {
  Vector x, r_prev, c_prev;
  Vector i, f, o, g;  // gate activations and candidate tanh
  Vector c, u, m;     // new cell, tanh(c), gated cell output
  Vector d, lower_c, mask_scale;
  bool highway = false;
};

struct StepResult {
  LayerState state;
  Vector y;
  StepTape tape;
};

namespace detail {

inline StepResult cell_step(const LstmLayerParams& p, const HighwayParams* hp, const Vector& x,
                            const LayerState& prev, const Vector* lower_c,
                            const DropoutMask* mask) {
  require(x.dim() == p.input_dim(), "cell step: input dim mismatch");
  require(prev.c.dim() == p.cell_dim(), "cell step: prev cell dim mismatch");
  require(prev.r.dim() == p.recur_dim(), "cell step: prev recurrent dim mismatch");
  const int n = p.cell_dim();

  Vector ai = matvec(p.W_xi, x);
  add_in_place(ai, matvec(p.W_mi, prev.r));
  add_hadamard(ai, p.w_ci, prev.c);
  add_in_place(ai, p.b_i);

  Vector af = matvec(p.W_xf, x);
  add_in_place(af, matvec(p.W_mf, prev.r));
  add_hadamard(af, p.w_cf, prev.c);
  add_in_place(af, p.b_f);

  Vector ag = matvec(p.W_xc, x);
  add_in_place(ag, matvec(p.W_mc, prev.r));
  add_in_place(ag, p.b_c);

  StepTape tape;
  tape.x = x;
  tape.r_prev = prev.r;
  tape.c_prev = prev.c;
  tape.i = sigmoid(ai);
  tape.f = sigmoid(af);
  tape.g = tanh(ag);

  tape.c = Vector(n);
  for (int k = 0; k < n; ++k) tape.c[k] = tape.f[k] * prev.c[k] + tape.i[k] * tape.g[k];

  if (hp != nullptr) {
    require(lower_c != nullptr && mask != nullptr, "highway step: missing lower cell or mask");
    require(lower_c->dim() == n, "highway step: lower cell dim != cell_dim");
    require(mask->scale.dim() == n, "highway step: mask dim != cell_dim");
    hp->check(n, p.input_dim());
    Vector ad = matvec(hp->W_xd, x);
    add_hadamard(ad, hp->w_cd, prev.c);
    add_hadamard(ad, hp->w_ld, *lower_c);
    add_in_place(ad, hp->b_d);
    tape.d = sigmoid(ad);
    tape.lower_c = *lower_c;
    tape.mask_scale = mask->scale;
    tape.highway = true;
    for (int k = 0; k < n; ++k) tape.c[k] += tape.d[k] * mask->scale[k] * (*lower_c)[k];
  }

  Vector ao = matvec(p.W_xo, x);
  add_in_place(ao, matvec(p.W_mo, prev.r));
  add_hadamard(ao, p.w_co, tape.c);
  add_in_place(ao, p.b_o);
  tape.o = sigmoid(ao);

  tape.u = tanh(tape.c);
  tape.m = hadamard(tape.o, tape.u);

  StepResult res;
  res.y = p.has_projection() ? matvec(p.W_proj, tape.m) : tape.m;
  res.state = LayerState{tape.c, res.y};
  res.tape = std::move(tape);
  return res;
}

}  // namespace detail

inline StepResult lstm_step(const LstmLayerParams& p, const Vector& x, const LayerState& prev) {
  return detail::cell_step(p, nullptr, x, prev, nullptr, nullptr);
}

inline StepResult highway_step(const LstmLayerParams& p, const HighwayParams& hp, const Vector& x,
                               const LayerState& prev, const Vector& lower_c,
                               const DropoutMask& mask) {
  return detail::cell_step(p, &hp, x, prev, &lower_c, &mask);
}

struct StepBackResult {
  Vector dx;
  LayerState dprev;
  Vector dlower_c;  // empty unless the step had a highway connection
};

// Reverse-mode of one step. dstate_next carries the loss gradient w.r.t.
// this step's (c, r) coming from later timesteps; dy carries the gradient
// from this frame's output consumers. Parameter gradients accumulate into
// grad / hgrad.
inline StepBackResult lstm_step_backward(const LstmLayerParams& p, const HighwayParams* hp,
                                         const StepTape& tape, const LayerState& dstate_next,
                                         const Vector& dy, LstmLayerParams& grad,
                                         HighwayParams* hgrad) {
  const int n = p.cell_dim();
  require(tape.c.dim() == n, "step backward: tape/params mismatch");
  require(dy.dim() == p.output_dim(), "step backward: dy dim mismatch");
  require(dstate_next.c.dim() == n && dstate_next.r.dim() == p.output_dim(),
          "step backward: dstate dim mismatch");
  require(tape.highway == (hp != nullptr), "step backward: tape/highway mismatch");

  Vector dr(p.output_dim());
  for (int k = 0; k < p.output_dim(); ++k) dr[k] = dy[k] + dstate_next.r[k];

  Vector dm;
  if (p.has_projection()) {
    add_outer(grad.W_proj, dr, tape.m);
    dm = matvec_t(p.W_proj, dr);
  } else {
    dm = dr;
  }

  Vector d_o(n), dc(n);
  for (int k = 0; k < n; ++k) {
    d_o[k] = dm[k] * tape.u[k];
    dc[k] = dstate_next.c[k] + dm[k] * tape.o[k] * (1.0 - tape.u[k] * tape.u[k]);
  }

  // output gate; its peephole looks at the new cell, so fold into dc first
  Vector dao(n);
  for (int k = 0; k < n; ++k) {
    dao[k] = d_o[k] * tape.o[k] * (1.0 - tape.o[k]);
    dc[k] += dao[k] * p.w_co[k];
  }
  add_outer(grad.W_xo, dao, tape.x);
  add_outer(grad.W_mo, dao, tape.r_prev);
  add_hadamard(grad.w_co, dao, tape.c);
  add_in_place(grad.b_o, dao);

  Vector dai(n), daf(n), dag(n);
  Vector dc_prev(n);
  for (int k = 0; k < n; ++k) {
    const double di = dc[k] * tape.g[k];
    const double df = dc[k] * tape.c_prev[k];
    const double dg = dc[k] * tape.i[k];
    dai[k] = di * tape.i[k] * (1.0 - tape.i[k]);
    daf[k] = df * tape.f[k] * (1.0 - tape.f[k]);
    dag[k] = dg * (1.0 - tape.g[k] * tape.g[k]);
    dc_prev[k] = dc[k] * tape.f[k] + dai[k] * p.w_ci[k] + daf[k] * p.w_cf[k];
  }

  StepBackResult res;
  if (tape.highway) {
    require(hgrad != nullptr, "step backward: missing highway grad accumulator");
    Vector dad(n);
    res.dlower_c = Vector(n);
    for (int k = 0; k < n; ++k) {
      const double dd = dc[k] * tape.mask_scale[k] * tape.lower_c[k];
      dad[k] = dd * tape.d[k] * (1.0 - tape.d[k]);
      res.dlower_c[k] = dc[k] * tape.d[k] * tape.mask_scale[k] + dad[k] * hp->w_ld[k];
      dc_prev[k] += dad[k] * hp->w_cd[k];
    }
    add_outer(hgrad->W_xd, dad, tape.x);
    add_hadamard(hgrad->w_cd, dad, tape.c_prev);
    add_hadamard(hgrad->w_ld, dad, tape.lower_c);
    add_in_place(hgrad->b_d, dad);
    res.dx = matvec_t(hp->W_xd, dad);
  } else {
    res.dx = Vector(p.input_dim());
  }

  add_outer(grad.W_xi, dai, tape.x);
  add_outer(grad.W_mi, dai, tape.r_prev);
  add_hadamard(grad.w_ci, dai, tape.c_prev);
  add_in_place(grad.b_i, dai);

  add_outer(grad.W_xf, daf, tape.x);
  add_outer(grad.W_mf, daf, tape.r_prev);
  add_hadamard(grad.w_cf, daf, tape.c_prev);
  add_in_place(grad.b_f, daf);

  add_outer(grad.W_xc, dag, tape.x);
  add_outer(grad.W_mc, dag, tape.r_prev);
  add_in_place(grad.b_c, dag);

  add_in_place(res.dx, matvec_t(p.W_xi, dai));
  add_in_place(res.dx, matvec_t(p.W_xf, daf));
  add_in_place(res.dx, matvec_t(p.W_xc, dag));
  add_in_place(res.dx, matvec_t(p.W_xo, dao));

  Vector dr_prev = matvec_t(p.W_mi, dai);
  add_in_place(dr_prev, matvec_t(p.W_mf, daf));
  add_in_place(dr_prev, matvec_t(p.W_mc, dag));
  add_in_place(dr_prev, matvec_t(p.W_mo, dao));

  res.dprev = LayerState{std::move(dc_prev), std::move(dr_prev)};
  return res;
}

inline LstmLayerParams make_lstm_params(int input_dim, int cell_dim, int proj_dim) {
  require(input_dim > 0 && cell_dim > 0 && proj_dim >= 0, "make_lstm_params: bad dims");
  LstmLayerParams p;
  const int rd = proj_dim > 0 ? proj_dim : cell_dim;
  p.W_xi = Matrix(cell_dim, input_dim);
  p.W_xf = Matrix(cell_dim, input_dim);
  p.W_xc = Matrix(cell_dim, input_dim);
  p.W_xo = Matrix(cell_dim, input_dim);
  p.W_mi = Matrix(cell_dim, rd);
  p.W_mf = Matrix(cell_dim, rd);
  p.W_mc = Matrix(cell_dim, rd);
  p.W_mo = Matrix(cell_dim, rd);
  p.w_ci = Vector(cell_dim);
  p.w_cf = Vector(cell_dim);
  p.w_co = Vector(cell_dim);
  p.b_i = Vector(cell_dim);
  p.b_f = Vector(cell_dim);
  p.b_c = Vector(cell_dim);
  p.b_o = Vector(cell_dim);
  if (proj_dim > 0) p.W_proj = Matrix(proj_dim, cell_dim);
  return p;
}

inline HighwayParams make_highway_params(int input_dim, int cell_dim) {
  HighwayParams hp;
  hp.W_xd = Matrix(cell_dim, input_dim);
  hp.w_cd = Vector(cell_dim);
  hp.w_ld = Vector(cell_dim);
  hp.b_d = Vector(cell_dim);
  return hp;
}

inline void fill_uniform(Matrix& m, RngStream& rng, double scale) {
  for (auto& x : m.data) x = rng.next_uniform(-scale, scale);
}

// Matrices uniform(-0.05, 0.05); peepholes and biases zero except the
// forget-gate bias, which starts at 1 so early cells retain state. The
// carry-gate bias stays 0, opening the highway half-way.
inline void init_lstm_params(LstmLayerParams& p, RngStream& rng, double scale = 0.05) {
  fill_uniform(p.W_xi, rng, scale);
  fill_uniform(p.W_xf, rng, scale);
  fill_uniform(p.W_xc, rng, scale);
  fill_uniform(p.W_xo, rng, scale);
  fill_uniform(p.W_mi, rng, scale);
  fill_uniform(p.W_mf, rng, scale);
  fill_uniform(p.W_mc, rng, scale);
  fill_uniform(p.W_mo, rng, scale);
  if (p.has_projection()) fill_uniform(p.W_proj, rng, scale);
  for (int k = 0; k < p.cell_dim(); ++k) p.b_f[k] = 1.0;
}

inline void init_highway_params(HighwayParams& hp, RngStream& rng, double scale = 0.05) {
  fill_uniform(hp.W_xd, rng, scale);
}

}  // namespace hlstm
