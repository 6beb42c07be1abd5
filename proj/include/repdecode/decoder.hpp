#pragma once

// Linear brain decoders: ridge regression from brain rows to model
// representation rows, evaluated with nested K-fold cross-validation.
//
// Orientation: prediction = brain_row * G, so G is d_B x d_H.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "repdecode/error.hpp"
#include "repdecode/matrixio.hpp"
#include "repdecode/rng.hpp"

namespace repdecode {

inline std::vector<double> default_beta_grid() {
  return {1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2, 1e3, 1e4, 1e5};
}

struct RidgeConfig {
  std::vector<double> beta_grid = default_beta_grid();
  std::size_t outer_folds = 8;
  std::size_t inner_folds = 7;
  std::uint64_t seed = 0;

  void validate() const {
    if (beta_grid.empty()) throw UsageError("ridge config: beta grid is empty");
    for (double b : beta_grid)
      if (!(b >= 0.0) || !std::isfinite(b)) throw UsageError("ridge config: beta values must be finite and >= 0");
    if (!std::is_sorted(beta_grid.begin(), beta_grid.end()))
      throw UsageError("ridge config: beta grid must be sorted ascending");
    if (outer_folds < 2 || inner_folds < 2) throw UsageError("ridge config: fold counts must be >= 2");
  }
};

// Closed-form ridge solution G = (x'x + beta I)^-1 x'y.
inline Matrix ridge_fit(const Matrix& x, const Matrix& y, double beta) {
  if (x.rows() != y.rows() || x.rows() < 1)
    throw DataError("ridge_fit: x has " + std::to_string(x.rows()) + " rows, y has " + std::to_string(y.rows()));
  if (!(beta >= 0.0)) throw UsageError("ridge_fit: beta must be >= 0");

  Matrix gram = x.transpose() * x;
  gram.diagonal().array() += beta;
  const Matrix rhs = x.transpose() * y;

  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() == Eigen::Success && llt.rcond() > 1e-13) return llt.solve(rhs);
  if (beta == 0.0) throw NumericalError("ridge_fit: singular system (x'x is not invertible and beta = 0)");
  Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success) throw NumericalError("ridge_fit: factorization failed");
  return ldlt.solve(rhs);
}

// Ridge solutions for many betas on one dataset, sharing one
// eigendecomposition of x'x.
class RidgePath {
 public:
  RidgePath(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows() || x.rows() < 1) throw DataError("RidgePath: row mismatch");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(x.transpose() * x);
    if (eig.info() != Eigen::Success) throw NumericalError("RidgePath: eigendecomposition failed");
    eigenvalues_ = eig.eigenvalues().cwiseMax(0.0);
    eigenvectors_ = eig.eigenvectors();
    projected_rhs_ = eigenvectors_.transpose() * (x.transpose() * y);
  }

  Matrix solve(double beta) const {
    const double tol = 1e-12 * std::max(1.0, eigenvalues_.maxCoeff());
    Vector inv(eigenvalues_.size());
    for (Eigen::Index i = 0; i < inv.size(); ++i) {
      const double d = eigenvalues_(i) + beta;
      if (beta == 0.0 && eigenvalues_(i) <= tol)
        throw NumericalError("ridge: singular system (x'x is not invertible and beta = 0)");
      inv(i) = 1.0 / d;
    }
    return eigenvectors_ * (inv.asDiagonal() * projected_rhs_);
  }

 private:
  Vector eigenvalues_;
  Matrix eigenvectors_;
  Matrix projected_rhs_;
};

inline double mse_metric(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw DataError("mse_metric: shape mismatch (" + std::to_string(pred.rows()) + "x" +
                    std::to_string(pred.cols()) + " vs " + std::to_string(truth.rows()) + "x" +
                    std::to_string(truth.cols()) + ")");
  if (pred.size() == 0) throw DataError("mse_metric: empty input");
  return (pred - truth).squaredNorm() / static_cast<double>(pred.size());
}

struct RankResult {
  double average = 0.0;
  std::vector<int> ranks;  // 1-indexed, one per sentence
};

namespace detail {

inline Matrix normalized_rows(const Matrix& m, const char* which) {
  Matrix out = m;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (!(n > 0.0))
      throw DataError(std::string("average_rank: zero-norm row ") + std::to_string(r) + " in " + which);
    out.row(r) /= n;
  }
  return out;
}

}  // namespace detail

// Rank of truth[k] among all truth rows, ordered by increasing cosine
// distance to pred[k]. Equal distances rank the lower row index first.
inline RankResult average_rank(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw DataError("average_rank: shape mismatch");
  if (pred.rows() == 0) throw DataError("average_rank: empty input");

  const Matrix p = detail::normalized_rows(pred, "pred");
  const Matrix t = detail::normalized_rows(truth, "truth");
  const Matrix dist = (-(p * t.transpose())).array() + 1.0;

  RankResult out;
  const Eigen::Index n = pred.rows();
  out.ranks.resize(static_cast<std::size_t>(n));
  double total = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double own = dist(k, k);
    int rank = 1;
    for (Eigen::Index m = 0; m < n; ++m) {
      const double d = dist(k, m);
      if (d < own || (d == own && m < k)) ++rank;
    }
    out.ranks[static_cast<std::size_t>(k)] = rank;
    total += rank;
  }
  out.average = total / static_cast<double>(n);
  return out;
}

// Fold membership follows sentence identity: `order` lists sentence indices
// by shuffled position, and outer fold f owns the contiguous position block
// [f*N/K, (f+1)*N/K).
struct FoldPlan {
  std::vector<std::size_t> order;
  std::size_t folds = 0;

  std::size_t size() const { return order.size(); }

  std::size_t block_begin(std::size_t f) const { return f * order.size() / folds; }

  std::vector<int> fold_of_sentence() const {
    std::vector<int> out(order.size(), -1);
    for (std::size_t f = 0; f < folds; ++f)
      for (std::size_t p = block_begin(f); p < block_begin(f + 1); ++p) out[order[p]] = static_cast<int>(f);
    return out;
  }
};

inline constexpr std::uint64_t kFoldStream = 0xF01D;

inline FoldPlan make_fold_plan(std::size_t n, std::size_t folds, std::uint64_t seed) {
  FoldPlan plan;
  plan.folds = folds;
  plan.order.resize(n);
  std::iota(plan.order.begin(), plan.order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, kFoldStream));
  rng.shuffle(plan.order);
  return plan;
}

// Carries a permutation of sentence indices through a plan: if row k of the
// new data is row perm[k] of the old, the returned plan gives every sentence
// the same folds it had before.
inline FoldPlan relabel(const FoldPlan& plan, const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inverse(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) inverse[perm[k]] = k;
  FoldPlan out = plan;
  for (auto& idx : out.order) idx = inverse[idx];
  return out;
}

struct FoldResult {
  std::size_t fold = 0;
  double chosen_beta = 0.0;
  double test_mse = 0.0;
  std::size_t test_size = 0;
};

struct DecodeResult {
  std::string subject;
  std::string task;
  int run = 0;
  int step = 0;

  std::vector<FoldResult> per_fold;
  std::vector<int> per_sentence_rank;
  std::vector<int> fold_assignment;
  double mse = 0.0;
  double average_rank = 0.0;
};

inline void to_json(nlohmann::json& j, const FoldResult& f) {
  j = nlohmann::json{{"fold", f.fold}, {"chosen_beta", f.chosen_beta}, {"test_mse", f.test_mse},
                     {"test_size", f.test_size}};
}

inline void from_json(const nlohmann::json& j, FoldResult& f) {
  f.fold = j.at("fold").get<std::size_t>();
  f.chosen_beta = j.at("chosen_beta").get<double>();
  f.test_mse = j.at("test_mse").get<double>();
  f.test_size = j.value("test_size", std::size_t{0});
}

inline void to_json(nlohmann::json& j, const DecodeResult& r) {
  j = nlohmann::json{{"subject", r.subject},   {"task", r.task},
                     {"run", r.run},           {"step", r.step},
                     {"mse", r.mse},           {"average_rank", r.average_rank},
                     {"per_fold", r.per_fold}, {"ranks", r.per_sentence_rank},
                     {"folds", r.fold_assignment}};
}

inline void from_json(const nlohmann::json& j, DecodeResult& r) {
  r.subject = j.at("subject").get<std::string>();
  r.task = j.at("task").get<std::string>();
  r.run = j.at("run").get<int>();
  r.step = j.at("step").get<int>();
  r.mse = j.at("mse").get<double>();
  r.average_rank = j.at("average_rank").get<double>();
  r.per_fold = j.at("per_fold").get<std::vector<FoldResult>>();
  r.per_sentence_rank = j.at("ranks").get<std::vector<int>>();
  if (j.contains("folds")) r.fold_assignment = j.at("folds").get<std::vector<int>>();
}

namespace detail {

inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

// Picks the beta with the lowest pooled held-out MSE over inner folds of the
// given training positions (already in plan order). Ties keep the smaller beta.
inline double select_beta(const Matrix& brain, const Matrix& target, const std::vector<std::size_t>& train,
                          const RidgeConfig& cfg) {
  const std::size_t n = train.size();
  std::vector<double> sse(cfg.beta_grid.size(), 0.0);
  for (std::size_t f = 0; f < cfg.inner_folds; ++f) {
    const std::size_t lo = f * n / cfg.inner_folds;
    const std::size_t hi = (f + 1) * n / cfg.inner_folds;
    std::vector<std::size_t> fit_idx, val_idx;
    for (std::size_t p = 0; p < n; ++p) (p >= lo && p < hi ? val_idx : fit_idx).push_back(train[p]);
    const Matrix xv = gather_rows(brain, val_idx);
    const Matrix yv = gather_rows(target, val_idx);
    const RidgePath path(gather_rows(brain, fit_idx), gather_rows(target, fit_idx));
    for (std::size_t b = 0; b < cfg.beta_grid.size(); ++b)
      sse[b] += (xv * path.solve(cfg.beta_grid[b]) - yv).squaredNorm();
  }
  std::size_t best = 0;
  for (std::size_t b = 1; b < sse.size(); ++b)
    if (sse[b] < sse[best]) best = b;
  return cfg.beta_grid[best];
}

}  // namespace detail

inline DecodeResult nested_cv_decode(const Matrix& brain, const Matrix& target, const RidgeConfig& cfg,
                                     const FoldPlan& plan) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(brain.rows());
  if (static_cast<std::size_t>(target.rows()) != n)
    throw DataError("nested_cv_decode: brain has " + std::to_string(n) + " rows, target has " +
                    std::to_string(target.rows()));
  if (plan.size() != n || plan.folds != cfg.outer_folds)
    throw UsageError("nested_cv_decode: fold plan does not match data/config");
  if (n < cfg.outer_folds)
    throw DataError("nested_cv_decode: " + std::to_string(n) + " sentences cannot fill " +
                    std::to_string(cfg.outer_folds) + " outer folds");
  // Smallest inner validation block must be non-empty.
  const std::size_t min_train = n - (n + cfg.outer_folds - 1) / cfg.outer_folds;
  if (min_train < cfg.inner_folds)
    throw DataError("nested_cv_decode: outer-training split too small for " + std::to_string(cfg.inner_folds) +
                    " inner folds");

  DecodeResult result;
  result.fold_assignment = plan.fold_of_sentence();
  Matrix predictions(target.rows(), target.cols());

  for (std::size_t f = 0; f < cfg.outer_folds; ++f) {
    const std::size_t lo = plan.block_begin(f);
    const std::size_t hi = plan.block_begin(f + 1);
    std::vector<std::size_t> train, test;
    for (std::size_t p = 0; p < n; ++p) (p >= lo && p < hi ? test : train).push_back(plan.order[p]);

    const double beta = cfg.beta_grid.size() == 1 ? cfg.beta_grid.front()
                                                  : detail::select_beta(brain, target, train, cfg);
    const Matrix g = RidgePath(detail::gather_rows(brain, train), detail::gather_rows(target, train)).solve(beta);
    const Matrix pred = detail::gather_rows(brain, test) * g;
    if (!pred.allFinite()) throw NumericalError("nested_cv_decode: non-finite predictions in fold " + std::to_string(f));

    for (std::size_t i = 0; i < test.size(); ++i)
      predictions.row(static_cast<Eigen::Index>(test[i])) = pred.row(static_cast<Eigen::Index>(i));
    result.per_fold.push_back({f, beta, mse_metric(pred, detail::gather_rows(target, test)), test.size()});
  }

  result.mse = mse_metric(predictions, target);
  auto ranks = average_rank(predictions, target);
  result.per_sentence_rank = std::move(ranks.ranks);
  result.average_rank = ranks.average;
  return result;
}

inline DecodeResult nested_cv_decode(const Matrix& brain, const Matrix& target, const RidgeConfig& cfg) {
  cfg.validate();
  return nested_cv_decode(brain, target, cfg,
                          make_fold_plan(static_cast<std::size_t>(brain.rows()), cfg.outer_folds, cfg.seed));
}

}  // namespace repdecode
