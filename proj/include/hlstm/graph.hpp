#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hlstm/tensor.hpp"

// Small labelled state graph standing in for a recognizer's decoding
// lattice. Paths start in any state with equal prior (the constant cancels
// in path posteriors); each state carries an output-class label and a row
// of transition probabilities summing to one. Per-utterance numerator
// (reference) state sequences live in the same file.
//
// Text format, one directive per line, '#' comments:
//
//   states <n>
//   label <state> <class>
//   trans <from> <to> <prob>          (unlisted transitions are 0)
//   numerator <utt_index> <s0> <s1> ... <sT-1>

namespace hlstm {

struct DecodingGraph {
  int n_states = 0;
  std::vector<int> labels;                    // class label per state
  Matrix trans;                               // n_states x n_states probabilities
  std::vector<std::vector<int>> numerators;   // per-utterance reference state sequences

  int max_label() const {
    int m = 0;
    for (int l : labels) m = std::max(m, l);
    return m;
  }

  void check() const {
    require(n_states >= 1, "graph: no states");
    require(static_cast<int>(labels.size()) == n_states, "graph: label count mismatch");
    require(trans.rows == n_states && trans.cols == n_states, "graph: transition shape");
    for (int l : labels) require(l >= 0, "graph: negative label");
    for (int s = 0; s < n_states; ++s) {
      double row = 0.0;
      for (int d = 0; d < n_states; ++d) {
        require(trans.at(s, d) >= 0.0, "graph: negative transition probability");
        row += trans.at(s, d);
      }
      require(std::abs(row - 1.0) <= 1e-9, "graph: outgoing probabilities must sum to 1");
    }
    for (const auto& num : numerators)
      for (int s : num) require(s >= 0 && s < n_states, "graph: numerator state out of range");
  }
};

inline DecodingGraph parse_graph(std::istream& is) {
  DecodingGraph g;
  std::map<int, std::vector<int>> numerators;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    if (tok == "states") {
      require(ls >> g.n_states && g.n_states >= 1, "graph parse: bad states line");
      g.labels.assign(g.n_states, 0);
      g.trans = Matrix(g.n_states, g.n_states);
    } else if (tok == "label") {
      int s, c;
      require(static_cast<bool>(ls >> s >> c), "graph parse: bad label line");
      require(s >= 0 && s < g.n_states, "graph parse: label state out of range");
      g.labels[s] = c;
    } else if (tok == "trans") {
      int from, to;
      double p;
      require(static_cast<bool>(ls >> from >> to >> p), "graph parse: bad trans line");
      require(from >= 0 && from < g.n_states && to >= 0 && to < g.n_states,
              "graph parse: transition state out of range");
      g.trans.at(from, to) = p;
    } else if (tok == "numerator") {
      int utt;
      require(static_cast<bool>(ls >> utt) && utt >= 0, "graph parse: bad numerator line");
      std::vector<int> seq;
      int s;
      while (ls >> s) seq.push_back(s);
      require(!seq.empty(), "graph parse: empty numerator");
      numerators[utt] = std::move(seq);
    } else {
      throw ContractError("graph parse: unknown directive '" + tok + "'");
    }
  }
  if (!numerators.empty()) {
    g.numerators.resize(numerators.rbegin()->first + 1);
    for (auto& [utt, seq] : numerators) g.numerators[utt] = std::move(seq);
  }
  g.check();
  return g;
}

inline DecodingGraph parse_graph_file(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), "parse_graph_file: cannot open file");
  return parse_graph(is);
}

inline void write_graph(std::ostream& os, const DecodingGraph& g) {
  os << "states " << g.n_states << "\n";
  for (int s = 0; s < g.n_states; ++s) os << "label " << s << " " << g.labels[s] << "\n";
  std::ostringstream num;
  num.precision(17);
  for (int s = 0; s < g.n_states; ++s)
    for (int d = 0; d < g.n_states; ++d)
      if (g.trans.at(s, d) != 0.0) {
        num.str("");
        num << g.trans.at(s, d);
        os << "trans " << s << " " << d << " " << num.str() << "\n";
      }
  for (size_t u = 0; u < g.numerators.size(); ++u) {
    os << "numerator " << u;
    for (int s : g.numerators[u]) os << " " << s;
    os << "\n";
  }
}

inline void write_graph_file(const std::string& path, const DecodingGraph& g) {
  std::ofstream os(path);
  require(os.good(), "write_graph_file: cannot open file");
  write_graph(os, g);
  require(os.good(), "write_graph_file: write failed");
}

}  // namespace hlstm
