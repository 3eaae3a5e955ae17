#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hlstm/network.hpp"

// Finite-difference verification of the analytic gradients. The numeric
// side only ever calls the forward pass, so it stays independent of the
// backward implementation it checks.

namespace hlstm {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_tensor;
  int worst_index = -1;
};

inline double gradcheck_rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central differences over every scalar in params.
template <class LossFn>
GradCheckReport finite_difference_check(StackParams& params, const StackParams& analytic,
                                        double eps, LossFn&& loss) {
  auto theta = collect_tensors(params);
  auto an = collect_tensors(const_cast<StackParams&>(analytic));
  require(theta.size() == an.size(), "finite_difference_check: tensor directory mismatch");
  GradCheckReport rep;
  for (size_t i = 0; i < theta.size(); ++i) {
    require(theta[i].size == an[i].size, "finite_difference_check: tensor size mismatch");
    for (size_t j = 0; j < theta[i].size; ++j) {
      const double save = theta[i].data[j];
      theta[i].data[j] = save + eps;
      const double up = loss();
      theta[i].data[j] = save - eps;
      const double dn = loss();
      theta[i].data[j] = save;
      const double fd = (up - dn) / (2.0 * eps);
      const double err = gradcheck_rel_err(an[i].data[j], fd);
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_tensor = theta[i].name;
        rep.worst_index = static_cast<int>(j);
      }
    }
  }
  return rep;
}

inline double mean_ce(const std::vector<Vector>& log_post, const std::vector<int>& labels) {
  require(log_post.size() == labels.size(), "mean_ce: length mismatch");
  require(!log_post.empty(), "mean_ce: no frames");
  double s = 0.0;
  for (size_t t = 0; t < log_post.size(); ++t) s -= log_post[t][labels[t]];
  return s / static_cast<double>(log_post.size());
}

inline std::vector<Vector> ce_dlogits(const std::vector<Vector>& post,
                                      const std::vector<int>& labels, double inv_count) {
  std::vector<Vector> d(post.size());
  for (size_t t = 0; t < post.size(); ++t) {
    d[t] = dlogits_from_ce(post[t], labels[t]);
    for (int k = 0; k < d[t].dim(); ++k) d[t][k] *= inv_count;
  }
  return d;
}

struct GradCheckCase {
  std::string name;
  GradCheckReport report;
};

// The full suite: layer kinds lstm / lstmp / highway-lstmp (with a fixed
// dropout mask) crossed with stack modes uni / full blstm / lc chunked.
// Toy dims throughout; eps = 1e-5.
inline std::vector<GradCheckCase> run_gradient_suite(uint64_t seed) {
  const double eps = 1e-5;
  std::vector<GradCheckCase> out;

  struct Kind {
    const char* name;
    LayerKind kind;
    int proj;
    double rate;
  };
  const Kind kinds[] = {{"lstm", LayerKind::lstm, 0, 0.0},
                        {"lstmp", LayerKind::lstm, 3, 0.0},
                        {"hlstmp-dropout", LayerKind::highway_lstm, 3, 0.4}};
  const char* modes[] = {"uni", "blstm", "lc-blstm"};

  uint64_t case_seed = seed;
  for (const Kind& kind : kinds) {
    for (const char* mode : modes) {
      ++case_seed;
      RngStream rng(case_seed);
      const bool bidir = std::string(mode) != "uni";
      StackSpec spec;
      spec.input_dim = 3;
      spec.output_dim = 4;
      spec.bidirectional = bidir;
      spec.layers = {LayerSpec{LayerKind::lstm, 5, kind.proj},
                     LayerSpec{kind.kind, 5, kind.proj}};
      StackParams params = init_stack_params(spec, rng, 0.4);

      const int T = 10;
      std::vector<Vector> frames(T);
      std::vector<int> labels(T);
      for (int t = 0; t < T; ++t) {
        frames[t] = sample_uniform(rng, 3, -1, 1);
        labels[t] = static_cast<int>(rng.next_u64() % 4);
      }

      std::vector<DropoutMask> fmask, bmask;
      for (int l = 0; l < spec.n_layers(); ++l) {
        fmask.push_back(params.layers[l].fwd.has_highway
                            ? make_dropout_mask(rng, spec.layers[l].cell_dim, kind.rate)
                            : DropoutMask::identity(spec.layers[l].cell_dim));
        bmask.push_back(bidir && params.layers[l].bwd.has_highway
                            ? make_dropout_mask(rng, spec.layers[l].cell_dim, kind.rate)
                            : DropoutMask::identity(spec.layers[l].cell_dim));
      }

      GradCheckCase gc;
      gc.name = std::string(kind.name) + "/" + mode;
      if (std::string(mode) == "lc-blstm") {
        // chunk 2 of the utterance with frozen carry from chunk 1: the
        // numeric loss must see the same truncation the backward applies
        const int nc = 4, nr = 3;
        ChunkBatch b1;
        b1.segment_len = nc;
        b1.streams.resize(1);
        b1.streams[0].frames.assign(frames.begin(), frames.begin() + nc);
        b1.streams[0].future.assign(frames.begin() + nc, frames.begin() + nc + nr);
        b1.streams[0].active = true;
        b1.streams[0].fresh = true;
        CarriedStates carried = make_carried(spec, 1);
        (void)forward_lc_chunk(spec, params, b1, carried, &fmask, &bmask);
        const CarriedStates frozen = carried;

        ChunkBatch b2;
        b2.segment_len = nc;
        b2.streams.resize(1);
        b2.streams[0].frames.assign(frames.begin() + nc, frames.begin() + 2 * nc);
        b2.streams[0].future.assign(frames.begin() + 2 * nc, frames.end());
        b2.streams[0].active = true;
        b2.streams[0].fresh = false;
        std::vector<int> chunk_labels(labels.begin() + nc, labels.begin() + 2 * nc);

        auto loss = [&]() {
          CarriedStates c = frozen;
          ChunkForward f = forward_lc_chunk(spec, params, b2, c, &fmask, &bmask);
          return mean_ce(f.streams[0]->log_post, chunk_labels);
        };
        CarriedStates c = frozen;
        ChunkForward f = forward_lc_chunk(spec, params, b2, c, &fmask, &bmask);
        StackParams grads = make_stack_params(spec);
        std::vector<std::vector<Vector>> dl(1);
        dl[0] = ce_dlogits(f.streams[0]->post, chunk_labels, 1.0 / nc);
        backward_lc_chunk(spec, params, f, dl, grads);
        gc.report = finite_difference_check(params, grads, eps, loss);
      } else {
        ForwardOptions opt;
        opt.fwd_masks = &fmask;
        opt.bwd_masks = &bmask;
        auto loss = [&]() {
          StackActivations acts = forward_full(spec, params, frames, opt);
          return mean_ce(acts.log_post, labels);
        };
        StackActivations acts = forward_full(spec, params, frames, opt);
        StackParams grads = make_stack_params(spec);
        backward_full(spec, params, acts, ce_dlogits(acts.post, labels, 1.0 / T), grads);
        gc.report = finite_difference_check(params, grads, eps, loss);
      }
      out.push_back(std::move(gc));
    }
  }
  return out;
}

}  // namespace hlstm
