#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "repdecode/decoder.hpp"
#include "test_support.hpp"

using namespace repdecode;

namespace {

double rel_frobenius(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST(RidgeFit, IdentityDesignWithoutPenaltyReturnsTarget) {
  const Matrix y = tsupport::gaussian(6, 3, 1);
  EXPECT_LT((ridge_fit(Matrix::Identity(6, 6), y, 0.0) - y).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RidgeFit, ZeroTargetGivesZeroMap) {
  const Matrix x = tsupport::gaussian(10, 4, 2);
  for (double beta : {0.0, 0.5, 100.0}) EXPECT_EQ(ridge_fit(x, Matrix::Zero(10, 3), beta).cwiseAbs().maxCoeff(), 0.0);
}

TEST(RidgeFit, MatchesExplicitInverse) {
  const Matrix x = tsupport::gaussian(20, 8, 10);
  const Matrix y = tsupport::gaussian(20, 5, 11);
  EXPECT_LT(rel_frobenius(ridge_fit(x, y, 1.0), oracle::ridge_by_inverse(x, y, 1.0)), 1e-8);
}

TEST(RidgeFit, SingularWithoutPenaltyIsAnError) {
  Matrix x = tsupport::gaussian(10, 3, 4);
  x.col(2) = x.col(0);
  EXPECT_THROW(ridge_fit(x, tsupport::gaussian(10, 2, 5), 0.0), NumericalError);
  EXPECT_NO_THROW(ridge_fit(x, tsupport::gaussian(10, 2, 5), 0.1));
}

TEST(RidgeFit, ShapeAndBetaErrors) {
  EXPECT_THROW(ridge_fit(Matrix::Ones(4, 2), Matrix::Ones(3, 2), 1.0), DataError);
  EXPECT_THROW(ridge_fit(Matrix::Ones(4, 2), Matrix::Ones(4, 2), -1.0), UsageError);
}

TEST(RidgeFit, TrainingLossNonDecreasingInBeta) {
  const Matrix x = tsupport::gaussian(30, 10, 20);
  const Matrix y = tsupport::gaussian(30, 4, 21);
  double prev = -1;
  for (double beta : {0.0, 1e-3, 1e-1, 1.0, 10.0, 1e3, 1e6}) {
    const double loss = (x * ridge_fit(x, y, beta) - y).squaredNorm();
    EXPECT_GE(loss, prev - 1e-9);
    prev = loss;
  }
}

TEST(RidgeFit, LargePenaltyShrinksMapToZero) {
  const Matrix x = tsupport::gaussian(30, 10, 30);
  const Matrix y = tsupport::gaussian(30, 4, 31);
  EXPECT_LT(ridge_fit(x, y, 1e12).norm(), 1e-6 * ridge_fit(x, y, 1.0).norm());
}

TEST(RidgePath, AgreesWithDirectSolve) {
  const Matrix x = tsupport::gaussian(40, 12, 40);
  const Matrix y = tsupport::gaussian(40, 6, 41);
  const RidgePath path(x, y);
  for (double beta : default_beta_grid()) EXPECT_LT(rel_frobenius(path.solve(beta), ridge_fit(x, y, beta)), 1e-9) << beta;
}

TEST(MseMetric, Basics) {
  const Matrix a = tsupport::gaussian(7, 3, 1);
  EXPECT_EQ(mse_metric(a, a), 0.0);
  EXPECT_DOUBLE_EQ(mse_metric(a.array() + 1.0, a), 1.0);
  EXPECT_THROW(mse_metric(a, Matrix::Zero(7, 2)), DataError);
}

TEST(MseMetric, MatchesElementwiseSum) {
  const Matrix a = tsupport::gaussian(13, 9, 2);
  const Matrix b = tsupport::gaussian(13, 9, 3);
  double s = 0;
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) s += (a(r, c) - b(r, c)) * (a(r, c) - b(r, c));
  EXPECT_NEAR(mse_metric(a, b), s / static_cast<double>(a.size()), 1e-12);
}

TEST(AverageRank, SelfIsNearest) {
  const Matrix t = tsupport::gaussian(20, 6, 5);
  const auto r = average_rank(t, t);
  EXPECT_EQ(r.average, 1.0);
  for (int k : r.ranks) EXPECT_EQ(k, 1);
}

TEST(AverageRank, OppositePredictionHandCase) {
  Matrix truth(2, 2);
  truth << 1, 0, 0, 1;
  Matrix pred = truth;
  pred.row(0) = -truth.row(0);
  const auto r = average_rank(pred, truth);
  EXPECT_EQ(r.ranks[0], 2);
  EXPECT_EQ(r.ranks[1], 1);
  EXPECT_DOUBLE_EQ(r.average, 1.5);
}

TEST(AverageRank, MatchesSortingOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix pred = tsupport::gaussian(5, 4, 100 + seed);
    const Matrix truth = tsupport::gaussian(5, 4, 200 + seed);
    EXPECT_EQ(average_rank(pred, truth).ranks, oracle::ranks_by_sorting(pred, truth)) << seed;
  }
}

TEST(AverageRank, TiesGoToLowerRowIndex) {
  Matrix truth = tsupport::gaussian(4, 3, 9);
  truth.row(2) = truth.row(1);
  const auto r = average_rank(truth, truth);
  EXPECT_EQ(r.ranks[1], 1);
  EXPECT_EQ(r.ranks[2], 2);
}

TEST(AverageRank, InvariantToPositiveRowScaling) {
  const Matrix pred = tsupport::gaussian(30, 5, 50);
  const Matrix truth = tsupport::gaussian(30, 5, 51);
  Rng rng(52);
  Matrix sp = pred, st = truth;
  for (Eigen::Index r = 0; r < 30; ++r) {
    sp.row(r) *= rng.uniform(0.25, 4.0);
    st.row(r) *= rng.uniform(0.25, 4.0);
  }
  EXPECT_EQ(average_rank(pred, truth).ranks, average_rank(sp, st).ranks);
}

TEST(AverageRank, ZeroNormRowNamesTheRow) {
  Matrix t = tsupport::gaussian(4, 3, 1);
  Matrix p = t;
  p.row(3).setZero();
  try {
    average_rank(p, t);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos);
  }
}

TEST(FoldPlan, PartitionsSentencesIntoEqualBlocks) {
  const auto plan = make_fold_plan(384, 8, 3);
  const auto fold = plan.fold_of_sentence();
  std::vector<int> counts(8, 0);
  for (int f : fold) {
    ASSERT_GE(f, 0);
    ++counts[static_cast<std::size_t>(f)];
  }
  for (int c : counts) EXPECT_EQ(c, 48);
  std::set<std::size_t> uniq(plan.order.begin(), plan.order.end());
  EXPECT_EQ(uniq.size(), 384u);
}

TEST(FoldPlan, UnevenSizesDifferByAtMostOne) {
  const auto plan = make_fold_plan(50, 8, 1);
  std::vector<int> counts(8, 0);
  for (int f : plan.fold_of_sentence()) ++counts[static_cast<std::size_t>(f)];
  EXPECT_LE(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()), 1);
}

TEST(NestedCv, RealizableMapDecodesPerfectly) {
  const Matrix brain = tsupport::gaussian(96, 16, 1);
  const Matrix target = brain * tsupport::gaussian(16, 24, 2);
  RidgeConfig cfg;
  cfg.beta_grid = {1e-6};
  const auto r = nested_cv_decode(brain, target, cfg);
  EXPECT_LT(r.mse, 1e-8);
  EXPECT_EQ(r.average_rank, 1.0);
  EXPECT_EQ(r.per_fold.size(), 8u);
  EXPECT_EQ(r.fold_assignment.size(), 96u);
}

TEST(NestedCv, AverageRankIsMeanOfRanks) {
  const auto r = nested_cv_decode(tsupport::gaussian(64, 8, 3), tsupport::gaussian(64, 6, 4), RidgeConfig{});
  double s = 0;
  for (int k : r.per_sentence_rank) {
    EXPECT_GE(k, 1);
    EXPECT_LE(k, 64);
    s += k;
  }
  EXPECT_NEAR(r.average_rank, s / 64.0, 1e-12);
}

TEST(NestedCv, IndependentDataSitsAtChance) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    RidgeConfig cfg;
    cfg.seed = seed;
    const auto r = nested_cv_decode(tsupport::gaussian(384, 32, 1000 + seed), tsupport::gaussian(384, 32, 2000 + seed), cfg);
    EXPECT_NEAR(r.average_rank, 192.5, 15.0) << seed;
  }
}

TEST(NestedCv, DeterministicGivenSeed) {
  const Matrix brain = tsupport::gaussian(80, 10, 5);
  const Matrix target = tsupport::gaussian(80, 7, 6);
  RidgeConfig cfg;
  cfg.seed = 17;
  const auto a = nested_cv_decode(brain, target, cfg);
  const auto b = nested_cv_decode(brain, target, cfg);
  EXPECT_EQ(a.mse, b.mse);
  EXPECT_EQ(a.per_sentence_rank, b.per_sentence_rank);
  cfg.seed = 18;
  EXPECT_NE(nested_cv_decode(brain, target, cfg).fold_assignment, a.fold_assignment);
}

TEST(NestedCv, InvariantToRelabelingSentences) {
  const Matrix brain = tsupport::gaussian(80, 10, 7);
  const Matrix target = brain * tsupport::gaussian(10, 6, 8) + 0.5 * tsupport::gaussian(80, 6, 9);
  RidgeConfig cfg;
  cfg.seed = 3;
  const auto plan = make_fold_plan(80, cfg.outer_folds, cfg.seed);
  const auto base = nested_cv_decode(brain, target, cfg, plan);

  std::vector<std::size_t> perm(80);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(10);
  rng.shuffle(perm);
  Matrix pb(80, 10), pt(80, 6);
  for (std::size_t k = 0; k < 80; ++k) {
    pb.row(static_cast<Eigen::Index>(k)) = brain.row(static_cast<Eigen::Index>(perm[k]));
    pt.row(static_cast<Eigen::Index>(k)) = target.row(static_cast<Eigen::Index>(perm[k]));
  }
  const auto moved = nested_cv_decode(pb, pt, cfg, relabel(plan, perm));
  EXPECT_NEAR(moved.mse, base.mse, 1e-12 * base.mse);
  EXPECT_DOUBLE_EQ(moved.average_rank, base.average_rank);
  for (std::size_t k = 0; k < 80; ++k) EXPECT_EQ(moved.per_sentence_rank[k], base.per_sentence_rank[perm[k]]);
  for (std::size_t f = 0; f < base.per_fold.size(); ++f)
    EXPECT_EQ(moved.per_fold[f].chosen_beta, base.per_fold[f].chosen_beta);
}

TEST(NestedCv, Errors) {
  EXPECT_THROW(nested_cv_decode(tsupport::gaussian(7, 3, 1), tsupport::gaussian(7, 3, 2), RidgeConfig{}), DataError);
  EXPECT_THROW(nested_cv_decode(tsupport::gaussian(40, 3, 1), tsupport::gaussian(39, 3, 2), RidgeConfig{}), DataError);
  RidgeConfig bad;
  bad.beta_grid = {10.0, 1.0};
  EXPECT_THROW(nested_cv_decode(tsupport::gaussian(40, 3, 1), tsupport::gaussian(40, 3, 2), bad), UsageError);
  bad = RidgeConfig{};
  bad.beta_grid.clear();
  EXPECT_THROW(bad.validate(), UsageError);
}

TEST(DecodeResultJson, RoundTrip) {
  auto r = nested_cv_decode(tsupport::gaussian(40, 4, 1), tsupport::gaussian(40, 3, 2), RidgeConfig{});
  r.subject = "S01";
  r.task = "lm";
  r.run = 2;
  r.step = 250;
  const nlohmann::json j = r;
  for (const char* key : {"subject", "task", "run", "step", "mse", "average_rank", "per_fold", "ranks"})
    EXPECT_TRUE(j.contains(key)) << key;
  const auto back = j.get<DecodeResult>();
  EXPECT_EQ(back.per_sentence_rank, r.per_sentence_rank);
  EXPECT_EQ(back.mse, r.mse);
  EXPECT_EQ(back.per_fold.size(), r.per_fold.size());
}
