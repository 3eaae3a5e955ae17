#include <catch_amalgamated.hpp>

#include "hlstm/gradcheck.hpp"
#include "hlstm/network.hpp"

using namespace hlstm;

namespace {

std::vector<Vector> random_frames(RngStream& rng, int t, int dim) {
  std::vector<Vector> frames(t);
  for (auto& f : frames) f = sample_uniform(rng, dim, -1, 1);
  return frames;
}

double max_post_diff(const std::vector<Vector>& a, const std::vector<Vector>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0;
  for (size_t t = 0; t < a.size(); ++t) {
    REQUIRE(a[t].dim() == b[t].dim());
    for (int k = 0; k < a[t].dim(); ++k)
      worst = std::max(worst, std::abs(std::exp(a[t][k]) - std::exp(b[t][k])));
  }
  return worst;
}

StackSpec small_spec(bool bidir, int layers, LayerKind kind, int cell = 5, int proj = 3) {
  StackSpec spec;
  spec.input_dim = 3;
  spec.output_dim = 4;
  spec.bidirectional = bidir;
  spec.layers.push_back(LayerSpec{LayerKind::lstm, cell, proj});
  for (int l = 1; l < layers; ++l) spec.layers.push_back(LayerSpec{kind, cell, proj});
  return spec;
}

}  // namespace

TEST_CASE("stack spec validation") {
  StackSpec spec = small_spec(false, 2, LayerKind::highway_lstm);
  CHECK_NOTHROW(spec.check());

  StackSpec bad1 = spec;
  bad1.layers[0].kind = LayerKind::highway_lstm;
  CHECK_THROWS_AS(bad1.check(), ContractError);

  StackSpec bad2 = spec;
  bad2.layers[1].cell_dim = 7;  // highway over mismatched cell dims
  CHECK_THROWS_AS(bad2.check(), ContractError);

  StackSpec bad3 = spec;
  bad3.layers.clear();
  CHECK_THROWS_AS(bad3.check(), ContractError);
}

TEST_CASE("single-frame bidirectional shapes") {
  RngStream rng(31);
  StackSpec spec = small_spec(true, 1, LayerKind::lstm);
  StackParams params = init_stack_params(spec, rng);
  CHECK(params.W_out.cols == 2 * 3);  // concat of both directions

  StackActivations acts = forward_full(spec, params, random_frames(rng, 1, 3));
  REQUIRE(acts.post.size() == 1);
  CHECK(acts.post[0].dim() == 4);
  CHECK(acts.head_in[0].dim() == 6);
  double sum = 0;
  for (int k = 0; k < 4; ++k) sum += acts.post[0][k];
  CHECK(std::abs(sum - 1.0) < 1e-10);
}

TEST_CASE("zero parameters give uniform posteriors") {
  StackSpec spec = small_spec(false, 2, LayerKind::lstm);
  StackParams params = make_stack_params(spec);
  RngStream rng(32);
  StackActivations acts = forward_full(spec, params, random_frames(rng, 6, 3));
  for (const auto& p : acts.post)
    for (int k = 0; k < 4; ++k) CHECK(p[k] == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("deep highway stack stays finite and normalized") {
  RngStream rng(33);
  for (int depth : {3, 8}) {
    StackSpec spec = small_spec(true, depth, LayerKind::highway_lstm);
    StackParams params = init_stack_params(spec, rng, 0.3);
    StackActivations acts = forward_full(spec, params, random_frames(rng, 12, 3));
    for (const auto& p : acts.post) {
      double sum = 0;
      for (int k = 0; k < p.dim(); ++k) {
        CHECK(std::isfinite(p[k]));
        CHECK(p[k] >= 0.0);
        sum += p[k];
      }
      CHECK(std::abs(sum - 1.0) < 1e-10);
    }
  }
}

TEST_CASE("unidirectional chunked equals full for any chunking") {
  RngStream rng(34);
  for (int trial = 0; trial < 10; ++trial) {
    const bool highway = trial % 2 == 1;
    StackSpec spec =
        small_spec(false, 2, highway ? LayerKind::highway_lstm : LayerKind::lstm);
    StackParams params = init_stack_params(spec, rng, 0.3);
    const int T = 1 + static_cast<int>(rng.next_u64() % 30);
    auto frames = random_frames(rng, T, 3);
    const int nc = 1 + static_cast<int>(rng.next_u64() % 7);

    StackActivations full = forward_full(spec, params, frames);
    auto chunked = lc_forward_utterance(spec, params, frames, nc, 0);
    CHECK(max_post_diff(full.log_post, chunked) < 1e-10);
  }
}

TEST_CASE("lc-blstm equals full blstm when future context covers the utterance") {
  RngStream rng(35);
  for (int trial = 0; trial < 10; ++trial) {
    const bool highway = trial % 2 == 1;
    StackSpec spec = small_spec(true, 2, highway ? LayerKind::highway_lstm : LayerKind::lstm);
    StackParams params = init_stack_params(spec, rng, 0.3);
    const int T = 2 + static_cast<int>(rng.next_u64() % 24);
    auto frames = random_frames(rng, T, 3);
    const int nc = 1 + static_cast<int>(rng.next_u64() % 6);

    StackActivations full = forward_full(spec, params, frames);
    auto chunked = lc_forward_utterance(spec, params, frames, nc, T);
    CHECK(max_post_diff(full.log_post, chunked) < 1e-10);
  }
}

TEST_CASE("lc-blstm with no future context is a documented approximation") {
  RngStream rng(36);
  StackSpec spec = small_spec(true, 2, LayerKind::lstm);
  StackParams params = init_stack_params(spec, rng, 0.4);
  auto frames = random_frames(rng, 16, 3);

  StackActivations full = forward_full(spec, params, frames);
  auto truncated = lc_forward_utterance(spec, params, frames, 4, 0);
  CHECK(max_post_diff(full.log_post, truncated) > 1e-8);
}

TEST_CASE("csc covers the whole utterance when context is large") {
  RngStream rng(37);
  StackSpec spec = small_spec(true, 2, LayerKind::lstm);
  StackParams params = init_stack_params(spec, rng, 0.3);
  const int T = 11;
  auto frames = random_frames(rng, T, 3);

  StackActivations full = forward_full(spec, params, frames);
  auto csc = csc_forward_utterance(spec, params, frames, T, T, T);
  CHECK(max_post_diff(full.log_post, csc) < 1e-12);
}

static double csc_mid_chunk_err(const StackSpec& spec, const StackParams& params,
                                const std::vector<Vector>& frames,
                                const StackActivations& full, int pos, int nl, int nc, int nr) {
  ChunkBatch::Stream st;
  st.frames.assign(frames.begin() + pos, frames.begin() + pos + nc);
  st.future.assign(frames.begin() + pos + nc, frames.begin() + pos + nc + nr);
  st.left.assign(frames.begin() + pos - nl, frames.begin() + pos);
  st.active = true;
  StackActivations acts = csc_chunk_forward(spec, params, st);
  double err = 0, n = 0;
  for (int t = 0; t < nc; ++t)
    for (int k = 0; k < spec.output_dim; ++k) {
      err += std::abs(acts.post[t][k] - full.post[pos + t][k]);
      n += 1;
    }
  return err / n;
}

TEST_CASE("csc mid-chunk error shrinks as left context grows") {
  const int T = 60, nc = 6, pos = 30;
  const std::vector<int> widths = {0, 4, 8, 16, 30};
  auto spread_frames = [](RngStream& rng, int t, int dim) {
    std::vector<Vector> f(t);
    for (auto& x : f) x = sample_uniform(rng, dim, -2, 2);
    return f;
  };

  // unidirectional: the left context is the only approximation, so the
  // error decays to nothing once it reaches back to the utterance start
  {
    RngStream rng(43);
    StackSpec spec = small_spec(false, 2, LayerKind::lstm);
    StackParams params = init_stack_params(spec, rng, 0.5);
    auto frames = spread_frames(rng, T, 3);
    StackActivations full = forward_full(spec, params, frames);
    double prev = 1e9;
    for (int nl : widths) {
      const double err = csc_mid_chunk_err(spec, params, frames, full, pos, nl, nc, 0);
      CHECK(err <= prev + 1e-14);
      prev = err;
    }
    CHECK(prev < 1e-10);
  }

  // bidirectional: decreases toward a floor set by the truncated future
  {
    RngStream rng(43);
    StackSpec spec = small_spec(true, 2, LayerKind::lstm);
    StackParams params = init_stack_params(spec, rng, 0.5);
    auto frames = spread_frames(rng, T, 3);
    StackActivations full = forward_full(spec, params, frames);
    double first = -1, prev = 1e9;
    for (int nl : widths) {
      const double err = csc_mid_chunk_err(spec, params, frames, full, pos, nl, nc, 6);
      if (first < 0) first = err;
      CHECK(err <= prev + 1e-14);
      prev = err;
    }
    CHECK(prev < 0.5 * first);
  }
}

TEST_CASE("counted macs follow the chunk cost formula") {
  RngStream rng(39);
  StackSpec spec = small_spec(true, 2, LayerKind::highway_lstm);
  StackParams params = init_stack_params(spec, rng, 0.3);

  struct Triple {
    int nl, nc, nr;
  };
  for (Triple t : {Triple{22, 22, 21}, Triple{5, 7, 3}, Triple{1, 1, 1}, Triple{10, 4, 6}}) {
    const int T = t.nl + t.nc + t.nr + 8;
    auto frames = random_frames(rng, T, 3);
    const int pos = t.nl;

    ChunkBatch batch;
    batch.segment_len = t.nc;
    batch.streams.resize(1);
    auto& lc = batch.streams[0];
    lc.frames.assign(frames.begin() + pos, frames.begin() + pos + t.nc);
    lc.future.assign(frames.begin() + pos + t.nc, frames.begin() + pos + t.nc + t.nr);
    lc.active = true;
    lc.fresh = false;
    CarriedStates carried = make_carried(spec, 1);
    ChunkForward lcf = forward_lc_chunk(spec, params, batch, carried);

    ChunkBatch::Stream cs = lc;
    cs.left.assign(static_cast<size_t>(t.nl), Vector(3));
    for (int j = 0; j < t.nl; ++j) cs.left[j] = frames[pos - t.nl + j];
    StackActivations cscf = csc_chunk_forward(spec, params, cs);

    const uint64_t lc_macs = lcf.stack_macs;
    const uint64_t csc_macs = cscf.stack_macs;
    REQUIRE(csc_macs > lc_macs);
    // (csc - lc)/csc == nl/(nl+nc+nr), checked as an exact integer identity
    CHECK((csc_macs - lc_macs) * static_cast<uint64_t>(t.nl + t.nc + t.nr) ==
          static_cast<uint64_t>(t.nl) * csc_macs);
    // the head work is identical in both schemes
    CHECK(lcf.head_macs == cscf.head_macs);
  }
}

TEST_CASE("gradient suite stays under tolerance") {
  auto cases = run_gradient_suite(2026);
  REQUIRE(cases.size() == 9);
  for (const auto& c : cases) {
    INFO(c.name << " worst " << c.report.worst_tensor << "[" << c.report.worst_index << "]");
    CHECK(c.report.max_rel_err <= 1e-4);
  }
}

TEST_CASE("unidirectional gradients respect causality") {
  RngStream rng(40);
  StackSpec spec = small_spec(false, 2, LayerKind::lstm);
  StackParams params = init_stack_params(spec, rng, 0.4);
  const int T = 8;
  auto frames = random_frames(rng, T, 3);

  StackActivations acts = forward_full(spec, params, frames);
  const int loss_frame = 3;
  std::vector<Vector> dlogits(T, Vector(4));
  dlogits[loss_frame] = dlogits_from_ce(acts.post[loss_frame], 1);

  StackParams grads = make_stack_params(spec);
  std::vector<Vector> dframes;
  backward_full(spec, params, acts, dlogits, grads, &dframes);
  REQUIRE(static_cast<int>(dframes.size()) == T);
  for (int t = 0; t < T; ++t) {
    double norm = 0;
    for (int j = 0; j < 3; ++j) norm += std::abs(dframes[t][j]);
    if (t > loss_frame)
      CHECK(norm == 0.0);
    else
      CHECK(norm > 0.0);
  }
}

TEST_CASE("streams in a chunk batch do not interact") {
  RngStream rng(41);
  StackSpec spec = small_spec(true, 2, LayerKind::highway_lstm);
  StackParams params = init_stack_params(spec, rng, 0.3);
  auto utt_a = random_frames(rng, 3, 3);  // ends mid-chunk: masked tail
  auto utt_b = random_frames(rng, 5, 3);

  ChunkBatch both;
  both.segment_len = 5;
  both.streams.resize(2);
  both.streams[0].frames = utt_a;
  both.streams[0].active = true;
  both.streams[1].frames = utt_b;
  both.streams[1].active = true;
  CarriedStates carried2 = make_carried(spec, 2);
  ChunkForward two = forward_lc_chunk(spec, params, both, carried2);

  ChunkBatch solo;
  solo.segment_len = 5;
  solo.streams.resize(1);
  solo.streams[0].frames = utt_b;
  solo.streams[0].active = true;
  CarriedStates carried1 = make_carried(spec, 1);
  ChunkForward one = forward_lc_chunk(spec, params, solo, carried1);

  REQUIRE(two.streams[1]->log_post.size() == one.streams[0]->log_post.size());
  CHECK(max_post_diff(two.streams[1]->log_post, one.streams[0]->log_post) == 0.0);

  // the masked tail of stream 0 contributes no outputs and no gradients
  CHECK(two.streams[0]->post.size() == 3);
  std::vector<std::vector<Vector>> dl(2);
  dl[0].assign(3, Vector(4));  // zero error on the short stream
  dl[1].resize(5);
  for (int t = 0; t < 5; ++t) dl[1][t] = dlogits_from_ce(two.streams[1]->post[t], 0);
  StackParams grads = make_stack_params(spec);
  backward_lc_chunk(spec, params, two, dl, grads);

  StackParams grads_solo = make_stack_params(spec);
  std::vector<std::vector<Vector>> dls(1);
  dls[0] = dl[1];
  backward_lc_chunk(spec, params, one, dls, grads_solo);

  auto a = collect_tensors(grads);
  auto b = collect_tensors(grads_solo);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < a[i].size; ++j) CHECK(a[i].data[j] == b[i].data[j]);
}

TEST_CASE("empty utterance is rejected") {
  StackSpec spec = small_spec(false, 1, LayerKind::lstm);
  StackParams params = make_stack_params(spec);
  CHECK_THROWS_AS(forward_full(spec, params, {}), ContractError);
}
