#pragma once

#include "hlstm/graph.hpp"

// State-level minimum Bayes risk over an explicit decoding graph. Path
// posteriors are
//
//   p(pi) ∝ exp(kappa * sum_t loglike[t][label(pi_t)]) * prod_t trans(pi_{t-1}, pi_t)
//
// and the objective is the expected frame accuracy E[acc], where acc(pi)
// counts frames whose state label matches the numerator's label. The
// gradient of E[acc] w.r.t. each frame-class log-likelihood is
//
//   kappa * sum_{pi with class k at t} p(pi) * (acc(pi) - E[acc]),
//
// computed by a scaled forward-backward pass with accuracy accumulators.

namespace hlstm {

struct SmbrResult {
  std::vector<Vector> error_signal;      // [frame][class] d E[acc] / d loglike
  double expected_accuracy = 0.0;        // in [0, T]
  std::vector<Vector> state_posteriors;  // [frame][state], each row sums to 1
};

inline SmbrResult smbr_error_signal(const DecodingGraph& g, const std::vector<Vector>& loglikes,
                                    const std::vector<int>& numerator, double kappa) {
  g.check();
  const int T = static_cast<int>(loglikes.size());
  const int S = g.n_states;
  require(T >= 1, "smbr: empty utterance");
  require(static_cast<int>(numerator.size()) == T, "smbr: numerator length mismatch");
  const int n_classes = loglikes[0].dim();
  require(g.max_label() < n_classes, "smbr: graph labels exceed class count");

  // local score and per-frame accuracy credit per state
  std::vector<Vector> phi(T, Vector(S)), credit(T, Vector(S));
  for (int t = 0; t < T; ++t) {
    const int ref = g.labels[numerator[t]];
    for (int s = 0; s < S; ++s) {
      phi[t][s] = std::exp(kappa * loglikes[t][g.labels[s]]);
      credit[t][s] = g.labels[s] == ref ? 1.0 : 0.0;
    }
  }

  // scaled forward pass; alpha_acc accumulates path-weighted accuracy
  std::vector<Vector> alpha(T, Vector(S)), alpha_acc(T, Vector(S));
  std::vector<double> scale(T);
  for (int t = 0; t < T; ++t) {
    Vector u(S), u_acc(S);
    for (int s = 0; s < S; ++s) {
      double sum = 0.0, sum_acc = 0.0;
      if (t == 0) {
        sum = 1.0;  // uniform start, constant prior cancels
      } else {
        for (int p = 0; p < S; ++p) {
          sum += g.trans.at(p, s) * alpha[t - 1][p];
          sum_acc += g.trans.at(p, s) * alpha_acc[t - 1][p];
        }
      }
      u[s] = phi[t][s] * sum;
      u_acc[s] = phi[t][s] * sum_acc + credit[t][s] * u[s];
    }
    double c = 0.0;
    for (int s = 0; s < S; ++s) c += u[s];
    require(c > 0.0, "smbr: no surviving path");
    scale[t] = c;
    for (int s = 0; s < S; ++s) {
      alpha[t][s] = u[s] / c;
      alpha_acc[t][s] = u_acc[s] / c;
    }
  }

  // scaled backward pass with the matching accuracy accumulator
  std::vector<Vector> beta(T, Vector(S)), beta_acc(T, Vector(S));
  for (int s = 0; s < S; ++s) beta[T - 1][s] = 1.0;
  for (int t = T - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double sum = 0.0, sum_acc = 0.0;
      for (int d = 0; d < S; ++d) {
        const double w = g.trans.at(s, d) * phi[t + 1][d];
        sum += w * beta[t + 1][d];
        sum_acc += w * (beta_acc[t + 1][d] + credit[t + 1][d] * beta[t + 1][d]);
      }
      beta[t][s] = sum / scale[t + 1];
      beta_acc[t][s] = sum_acc / scale[t + 1];
    }
  }

  SmbrResult res;
  for (int s = 0; s < S; ++s) res.expected_accuracy += alpha_acc[T - 1][s];

  res.state_posteriors.assign(T, Vector(S));
  res.error_signal.assign(T, Vector(n_classes));
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      const double gamma = alpha[t][s] * beta[t][s];
      const double gamma_acc = alpha_acc[t][s] * beta[t][s] + alpha[t][s] * beta_acc[t][s];
      res.state_posteriors[t][s] = gamma;
      res.error_signal[t][g.labels[s]] += kappa * (gamma_acc - res.expected_accuracy * gamma);
    }
  }
  return res;
}

// Debug dump: one line per frame, utterance id, frame index, then the
// error-signal entries.
inline void dump_error_signals(std::ostream& os, int utt_id,
                               const std::vector<Vector>& signal) {
  os.precision(17);
  for (size_t t = 0; t < signal.size(); ++t) {
    os << "utt " << utt_id << " frame " << t << " :";
    for (int k = 0; k < signal[t].dim(); ++k) os << " " << signal[t][k];
    os << "\n";
  }
}

}  // namespace hlstm
