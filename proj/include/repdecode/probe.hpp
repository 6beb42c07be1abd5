#pragma once

// Structural syntactic probe. A k x d_H matrix B defines the squared distance
// ||B(h_i - h_j)||^2 between contextual word vectors; training fits those
// distances to dependency-tree path lengths under an L1 loss, and parses are
// read back as minimum spanning trees of the predicted distances.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "repdecode/error.hpp"
#include "repdecode/matrixio.hpp"
#include "repdecode/rng.hpp"

namespace repdecode {

inline constexpr int kRootHead = -1;
inline constexpr Eigen::Index kMaxProbeRank = 30;

struct ParsedSentence {
  std::vector<std::string> tokens;
  std::vector<int> heads;  // 0-based; kRootHead marks the root
  Matrix reps;             // tokens x d_H; empty until attached

  std::size_t size() const { return tokens.size(); }
};

// Undirected edge, always stored with a < b.
struct Edge {
  int a = 0;
  int b = 0;

  static Edge make(int u, int v) { return u < v ? Edge{u, v} : Edge{v, u}; }
  auto operator<=>(const Edge&) const = default;
};

using DistMatrix = Matrix;

namespace detail {

inline void validate_tree(const std::vector<int>& heads) {
  const auto n = static_cast<int>(heads.size());
  if (n == 0) throw DataError("tree: empty sentence");
  int roots = 0;
  for (int i = 0; i < n; ++i) {
    const int h = heads[static_cast<std::size_t>(i)];
    if (h == kRootHead) {
      ++roots;
    } else if (h < 0 || h >= n || h == i) {
      throw DataError("tree: token " + std::to_string(i) + " has invalid head " + std::to_string(h));
    }
  }
  if (roots != 1) throw DataError("tree: expected exactly one root, found " + std::to_string(roots));
  // Every token must reach the root without revisiting a node.
  for (int i = 0; i < n; ++i) {
    int cur = i;
    for (int steps = 0; cur != kRootHead; ++steps) {
      if (steps > n) throw DataError("tree: head structure has a cycle through token " + std::to_string(i));
      cur = heads[static_cast<std::size_t>(cur)];
    }
  }
}

}  // namespace detail

inline std::vector<Edge> gold_edges(const ParsedSentence& s) {
  detail::validate_tree(s.heads);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < s.heads.size(); ++i)
    if (s.heads[i] != kRootHead) edges.push_back(Edge::make(static_cast<int>(i), s.heads[i]));
  std::sort(edges.begin(), edges.end());
  return edges;
}

// Path lengths in the undirected gold tree.
inline DistMatrix tree_distances(const ParsedSentence& s) {
  detail::validate_tree(s.heads);
  const auto n = static_cast<Eigen::Index>(s.heads.size());
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (const auto& e : gold_edges(s)) {
    adj[static_cast<std::size_t>(e.a)].push_back(e.b);
    adj[static_cast<std::size_t>(e.b)].push_back(e.a);
  }
  DistMatrix d = DistMatrix::Zero(n, n);
  // Tree: depth-first walk from each source fills one row.
  std::vector<int> stack;
  std::vector<int> parent(static_cast<std::size_t>(n));
  for (Eigen::Index src = 0; src < n; ++src) {
    stack.assign(1, static_cast<int>(src));
    parent[static_cast<std::size_t>(src)] = -1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v : adj[static_cast<std::size_t>(u)]) {
        if (v == parent[static_cast<std::size_t>(u)]) continue;
        parent[static_cast<std::size_t>(v)] = u;
        d(src, v) = d(src, u) + 1.0;
        stack.push_back(v);
      }
    }
  }
  return d;
}

struct ProbeConfig {
  Eigen::Index rank = kMaxProbeRank;
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  std::size_t batch_size = 20;
  double init_scale = 0.05;  // b entries start uniform in [-init_scale, init_scale]
  std::uint64_t seed = 0;
};

struct ProbeModel {
  Matrix b;                          // rank x d_H
  double initial_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> training_log;  // mean training loss after each epoch
  ProbeConfig config;
};

inline DistMatrix probe_distance(const Matrix& b, const Matrix& reps) {
  if (reps.cols() != b.cols())
    throw DataError("probe_distance: reps have " + std::to_string(reps.cols()) + " dims, probe expects " +
                    std::to_string(b.cols()));
  const Matrix proj = reps * b.transpose();
  const Eigen::Index t = reps.rows();
  DistMatrix d = DistMatrix::Zero(t, t);
  for (Eigen::Index i = 0; i < t; ++i)
    for (Eigen::Index j = i + 1; j < t; ++j) d(i, j) = d(j, i) = (proj.row(i) - proj.row(j)).squaredNorm();
  return d;
}

inline DistMatrix probe_distance(const ProbeModel& model, const Matrix& reps) {
  return probe_distance(model.b, reps);
}

// Sentence loss (1/T^2) * sum_{i,j} |d_ij - tree_ij|. When `grad` is non-null
// the gradient with respect to b is accumulated into it, scaled by `weight`.
//
// With s_ij = sign(d_ij - tree_ij) and L = diag(S 1) - S:
//   dLoss/db = (4/T^2) * (H b')' * (L H)
inline double sentence_loss(const Matrix& b, const Matrix& reps, const DistMatrix& tree, Matrix* grad = nullptr,
                            double weight = 1.0) {
  const Eigen::Index t = reps.rows();
  const DistMatrix d = probe_distance(b, reps);
  const double norm = 1.0 / static_cast<double>(t * t);
  const Matrix resid = d - tree;
  const double loss = resid.cwiseAbs().sum() * norm;
  if (grad) {
    const Matrix sign = resid.unaryExpr([](double r) { return static_cast<double>((r > 0) - (r < 0)); });
    Matrix lap = -sign;
    lap.diagonal() += sign.rowwise().sum();
    const Matrix proj = reps * b.transpose();
    *grad += (weight * 4.0 * norm) * (proj.transpose() * (lap * reps));
  }
  return loss;
}

struct ProbeBatchLoss {
  double loss = 0.0;
  Matrix grad;
};

// Mean sentence loss over `batch` and its gradient.
inline ProbeBatchLoss batch_loss(const Matrix& b, const std::vector<const ParsedSentence*>& batch,
                                 const std::vector<const DistMatrix*>& trees) {
  ProbeBatchLoss out;
  out.grad = Matrix::Zero(b.rows(), b.cols());
  const double w = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out.loss += w * sentence_loss(b, batch[i]->reps, *trees[i], &out.grad, w);
  return out;
}

inline Matrix init_probe(Eigen::Index rank, Eigen::Index dims, double scale, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xB0BE));
  Matrix b(rank, dims);
  for (Eigen::Index r = 0; r < rank; ++r)
    for (Eigen::Index c = 0; c < dims; ++c) b(r, c) = rng.uniform(-scale, scale);
  return b;
}

inline double mean_probe_loss(const Matrix& b, const std::vector<ParsedSentence>& data) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& s : data) {
    if (s.size() < 2) continue;
    total += sentence_loss(b, s.reps, tree_distances(s));
    ++n;
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

// Adam over shuffled minibatches; the log holds the full training loss after
// each epoch.
inline ProbeModel probe_train(const std::vector<ParsedSentence>& data, const ProbeConfig& cfg) {
  if (data.empty()) throw DataError("probe_train: no training sentences");
  if (cfg.rank < 1 || cfg.rank > kMaxProbeRank)
    throw UsageError("probe_train: rank must be in [1, " + std::to_string(kMaxProbeRank) + "]");
  if (cfg.batch_size < 1) throw UsageError("probe_train: batch size must be >= 1");

  const Eigen::Index dims = data.front().reps.cols();
  std::vector<const ParsedSentence*> usable;
  std::vector<DistMatrix> trees;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    if (static_cast<std::size_t>(s.reps.rows()) != s.size() || s.reps.cols() != dims)
      throw DataError("probe_train: sentence " + std::to_string(i) + " has reps of the wrong shape");
    if (s.size() < 2) continue;
    usable.push_back(&s);
    trees.push_back(tree_distances(s));
  }
  if (usable.empty()) throw DataError("probe_train: every sentence has fewer than 2 tokens");

  ProbeModel model;
  model.config = cfg;
  model.b = init_probe(cfg.rank, dims, cfg.init_scale, cfg.seed);

  const auto full_loss = [&] {
    double total = 0.0;
    for (std::size_t i = 0; i < usable.size(); ++i) total += sentence_loss(model.b, usable[i]->reps, trees[i]);
    return total / static_cast<double>(usable.size());
  };
  model.initial_loss = full_loss();

  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Matrix m1 = Matrix::Zero(model.b.rows(), model.b.cols());
  Matrix m2 = m1;
  std::uint64_t step = 0;
  std::vector<std::size_t> order(usable.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, 0x5EED));

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<const ParsedSentence*> batch;
      std::vector<const DistMatrix*> batch_trees;
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(usable[order[i]]);
        batch_trees.push_back(&trees[order[i]]);
      }
      const auto bl = batch_loss(model.b, batch, batch_trees);
      if (!std::isfinite(bl.loss) || !bl.grad.allFinite())
        throw NumericalError("probe_train: loss diverged in epoch " + std::to_string(epoch));
      ++step;
      m1 = beta1 * m1 + (1.0 - beta1) * bl.grad;
      m2 = beta2 * m2 + (1.0 - beta2) * bl.grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      model.b.array() -= cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
    }
    const double loss = full_loss();
    if (!std::isfinite(loss)) throw NumericalError("probe_train: loss diverged in epoch " + std::to_string(epoch));
    model.training_log.push_back(loss);
  }
  return model;
}

// Prim's algorithm from token 0. Among equal-weight candidates the edge with
// the smallest (min index, max index) pair wins.
inline std::vector<Edge> induce_parse(const DistMatrix& d) {
  const Eigen::Index t = d.rows();
  if (t < 2 || d.cols() != t) throw DataError("induce_parse: need a square matrix with T >= 2");
  std::vector<char> in_tree(static_cast<std::size_t>(t), 0);
  in_tree[0] = 1;
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(t - 1));
  for (Eigen::Index added = 1; added < t; ++added) {
    double best_w = std::numeric_limits<double>::infinity();
    Edge best{-1, -1};
    for (Eigen::Index u = 0; u < t; ++u) {
      if (!in_tree[static_cast<std::size_t>(u)]) continue;
      for (Eigen::Index v = 0; v < t; ++v) {
        if (in_tree[static_cast<std::size_t>(v)]) continue;
        const double w = d(u, v);
        const Edge e = Edge::make(static_cast<int>(u), static_cast<int>(v));
        if (w < best_w || (w == best_w && e < best) || best.a < 0) {
          best_w = w;
          best = e;
        }
      }
    }
    in_tree[static_cast<std::size_t>(in_tree[static_cast<std::size_t>(best.a)] ? best.b : best.a)] = 1;
    edges.push_back(best);
  }
  std::sort(edges.begin(), edges.end());
  return edges;
}

inline double uas(const std::vector<Edge>& pred, const ParsedSentence& gold) {
  const auto t = static_cast<int>(gold.size());
  if (t < 2) throw DataError("uas: sentence needs at least 2 tokens");
  if (pred.size() != static_cast<std::size_t>(t - 1))
    throw DataError("uas: expected " + std::to_string(t - 1) + " edges, got " + std::to_string(pred.size()));
  const auto gold_set = gold_edges(gold);
  std::set<Edge> seen;
  std::size_t correct = 0;
  for (const auto& raw : pred) {
    if (raw.a < 0 || raw.b < 0 || raw.a >= t || raw.b >= t)
      throw DataError("uas: edge (" + std::to_string(raw.a) + ", " + std::to_string(raw.b) +
                      ") references a token outside [0, " + std::to_string(t) + ")");
    const Edge e = Edge::make(raw.a, raw.b);
    if (seen.insert(e).second && std::binary_search(gold_set.begin(), gold_set.end(), e)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(t - 1);
}

// Mean per-sentence UAS of MST parses under the probe metric.
inline double evaluate_uas(const Matrix& b, const std::vector<ParsedSentence>& data) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& s : data) {
    if (s.size() < 2) continue;
    total += uas(induce_parse(probe_distance(b, s.reps)), s);
    ++n;
  }
  if (n == 0) throw DataError("evaluate_uas: no sentences with at least 2 tokens");
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// CoNLL-U

inline std::vector<ParsedSentence> read_conllu(std::istream& in, const std::string& source = "<stream>") {
  std::vector<ParsedSentence> out;
  ParsedSentence cur;
  std::vector<int> raw_heads;  // 1-based, 0 = root
  std::string line;
  std::size_t line_no = 0;
  std::size_t start_line = 0;

  const auto flush = [&] {
    if (cur.tokens.empty()) return;
    cur.heads.clear();
    for (std::size_t i = 0; i < raw_heads.size(); ++i) {
      const int h = raw_heads[i];
      if (h > static_cast<int>(raw_heads.size()))
        throw DataError(source + ":" + std::to_string(start_line) + ": head " + std::to_string(h) +
                        " out of range for sentence of " + std::to_string(raw_heads.size()) + " tokens");
      cur.heads.push_back(h == 0 ? kRootHead : h - 1);
    }
    try {
      detail::validate_tree(cur.heads);
    } catch (const DataError& e) {
      throw DataError(source + ":" + std::to_string(start_line) + ": " + e.what());
    }
    out.push_back(std::move(cur));
    cur = ParsedSentence{};
    raw_heads.clear();
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line.front() == '#') continue;
    const auto cols = io::detail::split(line, '\t');
    if (cols.size() != 10)
      throw DataError(source + ":" + std::to_string(line_no) + ": expected 10 tab-separated columns, got " +
                      std::to_string(cols.size()));
    const std::string_view id = cols[0];
    if (id.find('-') != std::string_view::npos || id.find('.') != std::string_view::npos) continue;

    const auto parse_int = [&](std::string_view s, const char* what) {
      int v = 0;
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || p != s.data() + s.size())
        throw DataError(source + ":" + std::to_string(line_no) + ": bad " + what + " '" + std::string(s) + "'");
      return v;
    };
    const int idx = parse_int(id, "ID");
    if (idx != static_cast<int>(cur.tokens.size()) + 1)
      throw DataError(source + ":" + std::to_string(line_no) + ": token ID " + std::to_string(idx) + " out of sequence");
    const int head = parse_int(cols[6], "HEAD");
    if (head < 0) throw DataError(source + ":" + std::to_string(line_no) + ": negative HEAD");
    if (cur.tokens.empty()) start_line = line_no;
    cur.tokens.emplace_back(cols[1]);
    raw_heads.push_back(head);
  }
  flush();
  return out;
}

inline std::vector<ParsedSentence> read_conllu(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_conllu(in, path.string());
}

inline void attach_reps(std::vector<ParsedSentence>& sentences, const SequenceSet& reps) {
  if (reps.size() != sentences.size())
    throw DataError("attach_reps: " + std::to_string(sentences.size()) + " parsed sentences but " +
                    std::to_string(reps.size()) + " representation blocks");
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (static_cast<std::size_t>(reps.sentences[i].rows()) != sentences[i].size())
      throw DataError("attach_reps: sentence " + std::to_string(i) + " has " + std::to_string(sentences[i].size()) +
                      " tokens but " + std::to_string(reps.sentences[i].rows()) + " vectors");
    sentences[i].reps = reps.sentences[i];
  }
}

// Seeded split into (train, test) index lists.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double test_fraction,
                                                                                    std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5117));
  rng.shuffle(idx);
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::min(n_test, n);
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {train, test};
}

inline void save_probe(const ProbeModel& model, const std::filesystem::path& prefix) {
  io::write_matrix(model.b, prefix.string() + ".probe.matx");
  nlohmann::json j{{"rank", model.config.rank},
                   {"dims", model.b.cols()},
                   {"epochs", model.config.epochs},
                   {"learning_rate", model.config.learning_rate},
                   {"batch_size", model.config.batch_size},
                   {"init_scale", model.config.init_scale},
                   {"seed", model.config.seed},
                   {"loss", "L1, per-sentence normalized by T^2"},
                   {"optimizer", "adam(0.9, 0.999, 1e-8)"},
                   {"initial_loss", model.initial_loss},
                   {"training_log", model.training_log}};
  std::ofstream out(prefix.string() + ".probe.json");
  out << j.dump(2) << '\n';
}

}  // namespace repdecode
