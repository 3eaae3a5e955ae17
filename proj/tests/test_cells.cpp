#include <catch_amalgamated.hpp>

#include "hlstm/cells.hpp"

using namespace hlstm;

namespace {

// Straight-line scalar re-implementation of the projected step, written
// independently of the library kernels. Used as the forward oracle.
struct OracleOut {
  std::vector<double> i, f, o, c, m, y;
};

OracleOut oracle_step(const LstmLayerParams& p, const HighwayParams* hp, const Vector& x,
                      const Vector& c_prev, const Vector& r_prev, const Vector* lower_c,
                      const Vector* mask) {
  const int n = p.cell_dim();
  const int in = p.input_dim();
  const int rd = p.recur_dim();
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };

  OracleOut o;
  o.i.resize(n);
  o.f.resize(n);
  o.o.resize(n);
  o.c.resize(n);
  o.m.resize(n);
  for (int k = 0; k < n; ++k) {
    double ai = p.b_i[k] + p.w_ci[k] * c_prev[k];
    double af = p.b_f[k] + p.w_cf[k] * c_prev[k];
    double ag = p.b_c[k];
    for (int j = 0; j < in; ++j) {
      ai += p.W_xi.at(k, j) * x[j];
      af += p.W_xf.at(k, j) * x[j];
      ag += p.W_xc.at(k, j) * x[j];
    }
    for (int j = 0; j < rd; ++j) {
      ai += p.W_mi.at(k, j) * r_prev[j];
      af += p.W_mf.at(k, j) * r_prev[j];
      ag += p.W_mc.at(k, j) * r_prev[j];
    }
    o.i[k] = sig(ai);
    o.f[k] = sig(af);
    o.c[k] = o.f[k] * c_prev[k] + o.i[k] * std::tanh(ag);
    if (hp != nullptr) {
      double ad = hp->b_d[k] + hp->w_cd[k] * c_prev[k] + hp->w_ld[k] * (*lower_c)[k];
      for (int j = 0; j < in; ++j) ad += hp->W_xd.at(k, j) * x[j];
      o.c[k] += sig(ad) * (*mask)[k] * (*lower_c)[k];
    }
  }
  for (int k = 0; k < n; ++k) {
    double ao = p.b_o[k] + p.w_co[k] * o.c[k];
    for (int j = 0; j < in; ++j) ao += p.W_xo.at(k, j) * x[j];
    for (int j = 0; j < rd; ++j) ao += p.W_mo.at(k, j) * r_prev[j];
    o.o[k] = sig(ao);
    o.m[k] = o.o[k] * std::tanh(o.c[k]);
  }
  if (p.has_projection()) {
    o.y.assign(p.W_proj.rows, 0.0);
    for (int r = 0; r < p.W_proj.rows; ++r)
      for (int k = 0; k < n; ++k) o.y[r] += p.W_proj.at(r, k) * o.m[k];
  } else {
    o.y = o.m;
  }
  return o;
}

LstmLayerParams random_cell(RngStream& rng, int in, int cell, int proj) {
  LstmLayerParams p = make_lstm_params(in, cell, proj);
  init_lstm_params(p, rng, 0.5);
  for (int k = 0; k < cell; ++k) {
    p.w_ci[k] = rng.next_uniform(-0.5, 0.5);
    p.w_cf[k] = rng.next_uniform(-0.5, 0.5);
    p.w_co[k] = rng.next_uniform(-0.5, 0.5);
    p.b_i[k] = rng.next_uniform(-0.5, 0.5);
    p.b_f[k] = rng.next_uniform(-0.5, 0.5);
    p.b_c[k] = rng.next_uniform(-0.5, 0.5);
    p.b_o[k] = rng.next_uniform(-0.5, 0.5);
  }
  return p;
}

HighwayParams random_highway(RngStream& rng, int in, int cell) {
  HighwayParams hp = make_highway_params(in, cell);
  init_highway_params(hp, rng, 0.5);
  for (int k = 0; k < cell; ++k) {
    hp.w_cd[k] = rng.next_uniform(-0.5, 0.5);
    hp.w_ld[k] = rng.next_uniform(-0.5, 0.5);
    hp.b_d[k] = rng.next_uniform(-0.5, 0.5);
  }
  return hp;
}

std::vector<double*> cell_scalars(LstmLayerParams& p, HighwayParams* hp) {
  std::vector<double*> out;
  auto addm = [&](Matrix& m) {
    for (auto& x : m.data) out.push_back(&x);
  };
  auto addv = [&](Vector& v) {
    for (auto& x : v.data) out.push_back(&x);
  };
  addm(p.W_xi);
  addm(p.W_xf);
  addm(p.W_xc);
  addm(p.W_xo);
  addm(p.W_mi);
  addm(p.W_mf);
  addm(p.W_mc);
  addm(p.W_mo);
  addv(p.w_ci);
  addv(p.w_cf);
  addv(p.w_co);
  addv(p.b_i);
  addv(p.b_f);
  addv(p.b_c);
  addv(p.b_o);
  if (p.has_projection()) addm(p.W_proj);
  if (hp != nullptr) {
    addm(hp->W_xd);
    addv(hp->w_cd);
    addv(hp->w_ld);
    addv(hp->b_d);
  }
  return out;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("lstm_step with all-zero params") {
  LstmLayerParams p = make_lstm_params(3, 4, 2);
  LayerState prev = zero_state(4, 2);
  Vector x(3, 0.7);

  StepResult r = lstm_step(p, x, prev);
  for (int k = 0; k < 4; ++k) {
    CHECK(r.tape.i[k] == 0.5);
    CHECK(r.tape.f[k] == 0.5);
    CHECK(r.tape.o[k] == 0.5);
    CHECK(r.state.c[k] == 0.0);
  }
  for (int k = 0; k < 2; ++k) CHECK(r.y[k] == 0.0);

  // forget gate at 0.5 halves a nonzero previous cell
  for (int k = 0; k < 4; ++k) prev.c[k] = 0.25 * (k + 1);
  StepResult r2 = lstm_step(p, x, prev);
  for (int k = 0; k < 4; ++k) CHECK(r2.state.c[k] == Catch::Approx(0.5 * prev.c[k]).margin(1e-15));
}

TEST_CASE("lstm_step matches the scalar oracle") {
  RngStream rng(11);
  LstmLayerParams p = random_cell(rng, 3, 4, 2);
  Vector x = sample_uniform(rng, 3, -1, 1);
  LayerState prev{sample_uniform(rng, 4, -1, 1), sample_uniform(rng, 2, -1, 1)};

  StepResult r = lstm_step(p, x, prev);
  OracleOut want = oracle_step(p, nullptr, x, prev.c, prev.r, nullptr, nullptr);
  for (int k = 0; k < 4; ++k) {
    CHECK(std::abs(r.tape.i[k] - want.i[k]) < 1e-12);
    CHECK(std::abs(r.tape.f[k] - want.f[k]) < 1e-12);
    CHECK(std::abs(r.tape.o[k] - want.o[k]) < 1e-12);
    CHECK(std::abs(r.state.c[k] - want.c[k]) < 1e-12);
    CHECK(std::abs(r.tape.m[k] - want.m[k]) < 1e-12);
  }
  for (int k = 0; k < 2; ++k) CHECK(std::abs(r.y[k] - want.y[k]) < 1e-12);
}

TEST_CASE("highway_step matches the scalar oracle") {
  RngStream rng(12);
  LstmLayerParams p = random_cell(rng, 3, 4, 0);
  HighwayParams hp = random_highway(rng, 3, 4);
  Vector x = sample_uniform(rng, 3, -1, 1);
  LayerState prev{sample_uniform(rng, 4, -1, 1), sample_uniform(rng, 4, -1, 1)};
  Vector lower = sample_uniform(rng, 4, -1, 1);
  DropoutMask mask = make_dropout_mask(rng, 4, 0.5);

  StepResult r = highway_step(p, hp, x, prev, lower, mask);
  OracleOut want = oracle_step(p, &hp, x, prev.c, prev.r, &lower, &mask.scale);
  for (int k = 0; k < 4; ++k) {
    CHECK(std::abs(r.state.c[k] - want.c[k]) < 1e-12);
    CHECK(std::abs(r.y[k] - want.y[k]) < 1e-12);
  }
}

TEST_CASE("highway zero params give half-open carry gate") {
  LstmLayerParams p = make_lstm_params(3, 4, 0);
  HighwayParams hp = make_highway_params(3, 4);
  Vector x(3, 0.3);
  LayerState prev = zero_state(4, 4);
  Vector lower(4);
  for (int k = 0; k < 4; ++k) lower[k] = 0.1 * (k + 1);

  StepResult r = highway_step(p, hp, x, prev, lower, DropoutMask::identity(4));
  for (int k = 0; k < 4; ++k) {
    CHECK(r.tape.d[k] == 0.5);
    CHECK(r.state.c[k] == Catch::Approx(0.5 * lower[k]).margin(1e-15));
  }
}

TEST_CASE("highway reduces to plain lstm when the carry gate saturates shut") {
  RngStream rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    LstmLayerParams p = random_cell(rng, 3, 5, 2);
    HighwayParams hp = random_highway(rng, 3, 5);
    for (int k = 0; k < 5; ++k) hp.b_d[k] = -1e6;
    Vector x = sample_uniform(rng, 3, -1, 1);
    LayerState prev{sample_uniform(rng, 5, -1, 1), sample_uniform(rng, 2, -1, 1)};
    Vector lower = sample_uniform(rng, 5, -1, 1);

    StepResult hw = highway_step(p, hp, x, prev, lower, DropoutMask::identity(5));
    StepResult plain = lstm_step(p, x, prev);
    for (int k = 0; k < 5; ++k) CHECK(std::abs(hw.state.c[k] - plain.state.c[k]) < 1e-12);
    for (int k = 0; k < 2; ++k) CHECK(std::abs(hw.y[k] - plain.y[k]) < 1e-12);
  }
}

TEST_CASE("highway with rate-1 dropout equals plain lstm exactly") {
  RngStream rng(14);
  LstmLayerParams p = random_cell(rng, 3, 5, 2);
  HighwayParams hp = random_highway(rng, 3, 5);
  Vector x = sample_uniform(rng, 3, -1, 1);
  LayerState prev{sample_uniform(rng, 5, -1, 1), sample_uniform(rng, 2, -1, 1)};
  Vector lower = sample_uniform(rng, 5, -1, 1);
  DropoutMask all_zero = make_dropout_mask(rng, 5, 1.0);

  StepResult hw = highway_step(p, hp, x, prev, lower, all_zero);
  StepResult plain = lstm_step(p, x, prev);
  for (int k = 0; k < 5; ++k) CHECK(hw.state.c[k] == plain.state.c[k]);
  for (int k = 0; k < 2; ++k) CHECK(hw.y[k] == plain.y[k]);
}

TEST_CASE("gate ranges") {
  RngStream rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    LstmLayerParams p = random_cell(rng, 4, 6, 3);
    HighwayParams hp = random_highway(rng, 4, 6);
    Vector x = sample_uniform(rng, 4, -3, 3);
    LayerState prev{sample_uniform(rng, 6, -3, 3), sample_uniform(rng, 3, -3, 3)};
    Vector lower = sample_uniform(rng, 6, -3, 3);
    StepResult r = highway_step(p, hp, x, prev, lower, DropoutMask::identity(6));
    for (int k = 0; k < 6; ++k) {
      CHECK((r.tape.i[k] > 0.0 && r.tape.i[k] < 1.0));
      CHECK((r.tape.f[k] > 0.0 && r.tape.f[k] < 1.0));
      CHECK((r.tape.o[k] > 0.0 && r.tape.o[k] < 1.0));
      CHECK((r.tape.d[k] > 0.0 && r.tape.d[k] < 1.0));
      CHECK((r.tape.m[k] > -1.0 && r.tape.m[k] < 1.0));
    }
  }
}

TEST_CASE("peephole diagonality") {
  RngStream rng(16);
  LstmLayerParams p = random_cell(rng, 3, 5, 0);
  Vector x = sample_uniform(rng, 3, -1, 1);
  LayerState prev{sample_uniform(rng, 5, -1, 1), sample_uniform(rng, 5, -1, 1)};
  StepResult base = lstm_step(p, x, prev);

  for (int k = 0; k < 5; ++k) {
    LstmLayerParams q = p;
    q.w_ci[k] += 0.37;
    StepResult bumped = lstm_step(q, x, prev);
    for (int j = 0; j < 5; ++j) {
      if (j == k)
        CHECK(bumped.tape.i[j] != base.tape.i[j]);
      else
        CHECK(bumped.tape.i[j] == base.tape.i[j]);
    }
  }
}

TEST_CASE("tape replay reproduces cached values exactly") {
  RngStream rng(17);
  LstmLayerParams p = random_cell(rng, 3, 4, 2);
  Vector x = sample_uniform(rng, 3, -1, 1);
  LayerState prev{sample_uniform(rng, 4, -1, 1), sample_uniform(rng, 2, -1, 1)};
  StepResult r = lstm_step(p, x, prev);
  StepResult replay = lstm_step(p, r.tape.x, LayerState{r.tape.c_prev, r.tape.r_prev});
  for (int k = 0; k < 4; ++k) {
    CHECK(replay.tape.c[k] == r.tape.c[k]);
    CHECK(replay.tape.i[k] == r.tape.i[k]);
    CHECK(replay.tape.m[k] == r.tape.m[k]);
  }
}

TEST_CASE("step backward: zero upstream gives zero gradients") {
  RngStream rng(18);
  LstmLayerParams p = random_cell(rng, 3, 4, 2);
  Vector x = sample_uniform(rng, 3, -1, 1);
  LayerState prev{sample_uniform(rng, 4, -1, 1), sample_uniform(rng, 2, -1, 1)};
  StepResult r = lstm_step(p, x, prev);

  LstmLayerParams grad = make_lstm_params(3, 4, 2);
  StepBackResult back =
      lstm_step_backward(p, nullptr, r.tape, zero_state(4, 2), Vector(2), grad, nullptr);
  auto flat = cell_scalars(grad, nullptr);
  for (double* g : flat) CHECK(*g == 0.0);
  for (int j = 0; j < 3; ++j) CHECK(back.dx[j] == 0.0);
  for (int k = 0; k < 4; ++k) CHECK(back.dprev.c[k] == 0.0);
}

static void check_step_gradients(bool highway, bool projection) {
  RngStream rng(highway ? 19 : 20);
  const int in = 3, cell = 4, proj = projection ? 2 : 0;
  LstmLayerParams p = random_cell(rng, in, cell, proj);
  HighwayParams hp = random_highway(rng, in, cell);
  Vector x = sample_uniform(rng, in, -1, 1);
  LayerState prev{sample_uniform(rng, cell, -1, 1),
                  sample_uniform(rng, p.output_dim(), -1, 1)};
  Vector lower = sample_uniform(rng, cell, -1, 1);
  DropoutMask mask = make_dropout_mask(rng, cell, 0.3);  // fixed for the whole check

  // loss = a . y + b . c_new
  Vector a = sample_uniform(rng, p.output_dim(), -1, 1);
  Vector b = sample_uniform(rng, cell, -1, 1);
  auto loss = [&](LstmLayerParams& pp, HighwayParams& hh, const Vector& xx,
                  const LayerState& pv, const Vector& lc) {
    StepResult r = highway ? highway_step(pp, hh, xx, pv, lc, mask) : lstm_step(pp, xx, pv);
    return dot(a, r.y) + dot(b, r.state.c);
  };

  StepResult r = highway ? highway_step(p, hp, x, prev, lower, mask) : lstm_step(p, x, prev);
  LstmLayerParams grad = make_lstm_params(in, cell, proj);
  HighwayParams hgrad = make_highway_params(in, cell);
  LayerState dnext{b, Vector(p.output_dim())};
  StepBackResult back = lstm_step_backward(p, highway ? &hp : nullptr, r.tape, dnext, a, grad,
                                           highway ? &hgrad : nullptr);

  const double eps = 1e-5;
  auto theta = cell_scalars(p, highway ? &hp : nullptr);
  auto analytic = cell_scalars(grad, highway ? &hgrad : nullptr);
  REQUIRE(theta.size() == analytic.size());
  double worst = 0;
  for (size_t idx = 0; idx < theta.size(); ++idx) {
    const double save = *theta[idx];
    *theta[idx] = save + eps;
    const double up = loss(p, hp, x, prev, lower);
    *theta[idx] = save - eps;
    const double dn = loss(p, hp, x, prev, lower);
    *theta[idx] = save;
    worst = std::max(worst, rel_err(*analytic[idx], (up - dn) / (2 * eps)));
  }
  CHECK(worst < 1e-4);

  // input, previous-state, and lower-cell gradients
  auto check_vec = [&](Vector& v, const Vector& an) {
    for (int i = 0; i < v.dim(); ++i) {
      const double save = v[i];
      v[i] = save + eps;
      const double up = loss(p, hp, x, prev, lower);
      v[i] = save - eps;
      const double dn = loss(p, hp, x, prev, lower);
      v[i] = save;
      CHECK(rel_err(an[i], (up - dn) / (2 * eps)) < 1e-4);
    }
  };
  check_vec(x, back.dx);
  check_vec(prev.c, back.dprev.c);
  check_vec(prev.r, back.dprev.r);
  if (highway) check_vec(lower, back.dlower_c);
}

TEST_CASE("lstm step gradients match finite differences") {
  check_step_gradients(false, true);
  check_step_gradients(false, false);
}

TEST_CASE("highway step gradients match finite differences") {
  check_step_gradients(true, true);
  check_step_gradients(true, false);
}

TEST_CASE("dropout mask construction") {
  RngStream rng(21);
  DropoutMask none = make_dropout_mask(rng, 16, 0.0);
  for (int i = 0; i < 16; ++i) CHECK(none.scale[i] == 1.0);

  DropoutMask all = make_dropout_mask(rng, 16, 1.0);
  for (int i = 0; i < 16; ++i) CHECK(all.scale[i] == 0.0);

  CHECK_THROWS_AS(make_dropout_mask(rng, 4, 1.5), ContractError);
  CHECK_THROWS_AS(make_dropout_mask(rng, 4, -0.1), ContractError);

  const int n = 100000;
  DropoutMask m = make_dropout_mask(rng, n, 0.8);
  int zeros = 0;
  for (int i = 0; i < n; ++i) {
    if (m.scale[i] == 0.0)
      ++zeros;
    else
      CHECK(m.scale[i] == Catch::Approx(5.0));
  }
  CHECK(std::abs(zeros / static_cast<double>(n) - 0.8) < 0.01);
}
