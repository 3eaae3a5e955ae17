#include <catch_amalgamated.hpp>

#include <sstream>

#include "graph_cases.hpp"

using namespace hlstm;
using namespace hlstm_test;

TEST_CASE("graph text format round trips") {
  RngStream rng(90);
  DecodingGraph g = random_graph(rng, 4, 3, 2, 6);
  std::ostringstream os;
  write_graph(os, g);
  std::istringstream is(os.str());
  DecodingGraph g2 = parse_graph(is);
  CHECK(g2.n_states == g.n_states);
  CHECK(g2.labels == g.labels);
  CHECK(g2.numerators == g.numerators);
  for (int s = 0; s < g.n_states; ++s)
    for (int d = 0; d < g.n_states; ++d) CHECK(g2.trans.at(s, d) == g.trans.at(s, d));
}

TEST_CASE("graph parser rejects bad input") {
  {
    std::istringstream is("states 2\nlabel 0 0\nlabel 1 1\ntrans 0 0 0.4\ntrans 0 1 0.4\n"
                          "trans 1 0 0.5\ntrans 1 1 0.5\n");
    CHECK_THROWS_AS(parse_graph(is), ContractError);  // row 0 sums to 0.8
  }
  {
    std::istringstream is("states 2\nfoo 1 2\n");
    CHECK_THROWS_AS(parse_graph(is), ContractError);
  }
  {
    std::istringstream is("states 2\nlabel 0 0\nlabel 1 1\ntrans 0 0 1\ntrans 1 1 1\n"
                          "numerator 0 0 2\n");
    CHECK_THROWS_AS(parse_graph(is), ContractError);  // numerator state out of range
  }
}

TEST_CASE("graph comments and defaults") {
  std::istringstream is(
      "# toy graph\n"
      "states 2\n"
      "label 0 1\nlabel 1 0\n"
      "trans 0 0 0.5\ntrans 0 1 0.5  # split\n"
      "trans 1 0 1.0\n"
      "numerator 0 0 1 0\n");
  DecodingGraph g = parse_graph(is);
  CHECK(g.trans.at(1, 1) == 0.0);
  CHECK(g.numerators[0] == std::vector<int>{0, 1, 0});
}

TEST_CASE("indistinguishable states give a zero gradient") {
  // both states carry the same class: every path scores the same accuracy,
  // so the signal vanishes identically
  DecodingGraph g;
  g.n_states = 2;
  g.labels = {1, 1};
  g.trans = Matrix(2, 2, 0.5);
  g.numerators = {{0, 1}};
  std::vector<Vector> ll(2, Vector(3, std::log(1.0 / 3.0)));
  SmbrResult r = smbr_error_signal(g, ll, g.numerators[0], 0.2);
  CHECK(r.expected_accuracy == Catch::Approx(2.0).margin(1e-12));
  for (const auto& row : r.error_signal)
    for (int k = 0; k < 3; ++k) CHECK(std::abs(row[k]) < 1e-14);
}

TEST_CASE("forward-backward matches exhaustive enumeration") {
  RngStream rng(91);
  for (int trial = 0; trial < 12; ++trial) {
    const int S = 2 + static_cast<int>(rng.next_u64() % 3);
    const int T = 3 + static_cast<int>(rng.next_u64() % 4);
    const int K = 2 + static_cast<int>(rng.next_u64() % 3);
    DecodingGraph g = random_graph(rng, S, K, 1, T);
    auto ll = random_loglikes(rng, T, K);

    SmbrResult fb = smbr_error_signal(g, ll, g.numerators[0], 0.2);
    BruteSmbr brute = brute_force_smbr(g, ll, g.numerators[0], 0.2);

    CHECK(std::abs(fb.expected_accuracy - brute.expected_accuracy) < 1e-10);
    for (int t = 0; t < T; ++t)
      for (int k = 0; k < K; ++k)
        CHECK(std::abs(fb.error_signal[t][k] - brute.grad[t][k]) < 1e-10);
  }
}

TEST_CASE("signal equals finite differences of the expected accuracy") {
  RngStream rng(92);
  DecodingGraph g = random_graph(rng, 4, 3, 1, 6);
  auto ll = random_loglikes(rng, 6, 3);
  const double kappa = 0.2;
  SmbrResult base = smbr_error_signal(g, ll, g.numerators[0], kappa);

  const double eps = 1e-5;
  for (int t = 0; t < 6; ++t) {
    for (int k = 0; k < 3; ++k) {
      const double save = ll[t][k];
      ll[t][k] = save + eps;
      const double up = smbr_error_signal(g, ll, g.numerators[0], kappa).expected_accuracy;
      ll[t][k] = save - eps;
      const double dn = smbr_error_signal(g, ll, g.numerators[0], kappa).expected_accuracy;
      ll[t][k] = save;
      CHECK(std::abs(base.error_signal[t][k] - (up - dn) / (2 * eps)) < 1e-6);
    }
  }
}

TEST_CASE("smbr structural properties") {
  RngStream rng(93);
  for (int trial = 0; trial < 8; ++trial) {
    const int S = 2 + static_cast<int>(rng.next_u64() % 7);
    const int T = 2 + static_cast<int>(rng.next_u64() % 10);
    DecodingGraph g = random_graph(rng, S, 4, 1, T);
    auto ll = random_loglikes(rng, T, 4);
    SmbrResult r = smbr_error_signal(g, ll, g.numerators[0], 0.2);

    CHECK(r.expected_accuracy >= 0.0);
    CHECK(r.expected_accuracy <= static_cast<double>(T));
    for (int t = 0; t < T; ++t) {
      double post_sum = 0.0, sig_sum = 0.0;
      for (int s = 0; s < S; ++s) post_sum += r.state_posteriors[t][s];
      for (int k = 0; k < 4; ++k) sig_sum += r.error_signal[t][k];
      CHECK(std::abs(post_sum - 1.0) < 1e-10);
      // marginalizing the signal over classes cancels exactly
      CHECK(std::abs(sig_sum) < 1e-12);
    }
  }
}

TEST_CASE("mismatched numerator length is rejected") {
  RngStream rng(94);
  DecodingGraph g = random_graph(rng, 3, 3, 1, 5);
  auto ll = random_loglikes(rng, 4, 3);
  CHECK_THROWS_AS(smbr_error_signal(g, ll, g.numerators[0], 0.2), ContractError);
}

TEST_CASE("error signal dump is line-delimited and parseable") {
  RngStream rng(95);
  DecodingGraph g = random_graph(rng, 3, 3, 1, 3);
  auto ll = random_loglikes(rng, 3, 3);
  SmbrResult r = smbr_error_signal(g, ll, g.numerators[0], 0.2);

  std::ostringstream os;
  dump_error_signals(os, 7, r.error_signal);
  std::istringstream is(os.str());
  std::string word;
  int utt, frame, lines = 0;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string colon;
    REQUIRE(static_cast<bool>(ls >> word >> utt >> word >> frame >> colon));
    CHECK(utt == 7);
    CHECK(frame == lines);
    double v;
    int n = 0;
    while (ls >> v) ++n;
    CHECK(n == 3);
    ++lines;
  }
  CHECK(lines == 3);
}
