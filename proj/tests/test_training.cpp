#include <gtest/gtest.h>

#include "support.hpp"

using namespace hmmvb;
using namespace hmmvb::testing;

namespace {

double max_param_diff(const HmmVbModel& a, const HmmVbModel& b) {
  double d = (a.initial_probs - b.initial_probs).cwiseAbs().maxCoeff();
  for (std::size_t t = 0; t < a.transitions.size(); ++t)
    d = std::max(d, (a.transitions[t] - b.transitions[t]).cwiseAbs().maxCoeff());
  for (std::size_t t = 0; t < a.emissions.size(); ++t)
    for (std::size_t k = 0; k < a.emissions[t].size(); ++k) {
      d = std::max(d, (a.emissions[t][k].mean - b.emissions[t][k].mean).cwiseAbs().maxCoeff());
      d = std::max(d, (a.emissions[t][k].covariance - b.emissions[t][k].covariance).cwiseAbs().maxCoeff());
    }
  return d;
}

double max_gmm_diff(const PlainGmm& g, const HmmVbModel& m) {
  double d = 0.0;
  for (std::size_t k = 0; k < g.weights.size(); ++k) {
    d = std::max(d, std::abs(g.weights[k] - m.initial_probs[k]));
    d = std::max(d, (g.means[k] - m.emissions[0][k].mean).cwiseAbs().maxCoeff());
    d = std::max(d, (g.covariances[k] - m.emissions[0][k].covariance).cwiseAbs().maxCoeff());
  }
  return d;
}

}  // namespace

TEST(Fit, SingleGaussianIsWeightedSampleMoments) {
  Rng rng(1);
  RowMatrix x(10, 2);
  std::normal_distribution<double> z(0.0, 1.0);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = z(rng);
  Vector w(10);
  for (int i = 0; i < 10; ++i) w[i] = 0.5 + i;
  const BlockStructure s({2}, {1});
  FitConfig c;
  c.restarts = 1;
  c.max_iterations = 1;
  const FitResult fit = baum_welch_fit(Dataset(x, s, w), s, c);
  const Vector mean = (w.transpose() * x).transpose() / w.sum();
  Matrix cov = Matrix::Zero(2, 2);
  for (int i = 0; i < 10; ++i) cov += w[i] * (x.row(i).transpose() - mean) * (x.row(i).transpose() - mean).transpose();
  cov /= w.sum();
  cov.diagonal().array() += reference_ridge(x, w, c.ridge_factor);
  EXPECT_LT((fit.model.emissions[0][0].mean - mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((fit.model.emissions[0][0].covariance - cov).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Fit, SingleBlockMatchesPlainGmmEm) {
  Rng rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    const int d = uniform_int(rng, 1, 3);
    const int m = uniform_int(rng, 2, 4);
    const HmmVbModel truth = random_model(rng, {d}, {m}, 3.0);
    const RowMatrix x = sample_model(rng, truth, 300);
    Vector w(300);
    for (int i = 0; i < 300; ++i) w[i] = uniform(rng, 0.5, 2.0);
    const Dataset data(x, truth.structure, w);
    FitConfig c;
    c.max_iterations = 15;
    c.rel_loglik_tolerance = 1e-300;
    c.restarts = 1;
    c.rng_seed = static_cast<std::uint64_t>(rep);
    const HmmVbModel init = initialize(data, truth.structure, c);
    const double ridge = reference_ridge(x, w, c.ridge_factor);
    PlainGmm g = plain_gmm_from_model(init);
    double worst = 0.0;
    baum_welch_run(data, init, c, [&](int, const HmmVbModel& next) {
      g = plain_gmm_em_step(g, x, w, ridge);
      worst = std::max(worst, max_gmm_diff(g, next));
    });
    EXPECT_LT(worst, 1e-10);
  }
}

TEST(Fit, LogLikelihoodIsMonotone) {
  Rng rng(3);
  for (int rep = 0; rep < 6; ++rep) {
    const HmmVbModel truth = random_small_model(rng, 2, 4, 2, 4, 1, 2);
    const Dataset data(sample_model(rng, truth, 400), truth.structure);
    FitConfig c;
    c.restarts = 2;
    c.max_iterations = 60;
    c.rng_seed = static_cast<std::uint64_t>(rep);
    const FitResult fit = baum_welch_fit(data, truth.structure, c);
    const auto& tr = fit.report.trace;
    for (std::size_t i = 1; i < tr.size(); ++i) EXPECT_GE(tr[i], tr[i - 1] - 1e-8 * std::abs(tr[i - 1]));
    EXPECT_EQ(fit.report.log_likelihood, tr.back());
    EXPECT_NEAR(fit.report.log_likelihood, log_likelihood(fit.model, data), 1e-8 * std::abs(tr.back()));
  }
}

TEST(Fit, TransitionsStayStochasticAndCovariancesPd) {
  Rng rng(4);
  const HmmVbModel truth = random_model(rng, {2, 1, 2}, {3, 2, 4});
  const Dataset data(sample_model(rng, truth, 300), truth.structure);
  FitConfig c;
  c.restarts = 1;
  c.max_iterations = 30;
  baum_welch_run(data, initialize(data, truth.structure, c), c,
                 [&](int, const HmmVbModel& m) { EXPECT_NO_THROW(m.validate(1e-10)); });
}

TEST(Fit, IntegerWeightsEqualReplication) {
  Rng rng(5);
  const HmmVbModel truth = random_model(rng, {1, 2}, {2, 3});
  const RowMatrix x = sample_model(rng, truth, 60);
  Vector w(60);
  std::vector<Eigen::Index> rows;
  for (int i = 0; i < 60; ++i) {
    w[i] = uniform_int(rng, 1, 3);
    for (int r = 0; r < w[i]; ++r) rows.push_back(i);
  }
  RowMatrix rep(rows.size(), 3);
  for (std::size_t r = 0; r < rows.size(); ++r) rep.row(r) = x.row(rows[r]);
  const Dataset weighted(x, truth.structure, w);
  const Dataset replicated(rep, truth.structure);
  FitConfig c;
  c.restarts = 1;
  c.max_iterations = 20;
  c.rel_loglik_tolerance = 1e-300;
  const HmmVbModel init = initialize(weighted, truth.structure, c);
  std::vector<HmmVbModel> a, b;
  baum_welch_run(weighted, init, c, [&](int, const HmmVbModel& m) { a.push_back(m); });
  baum_welch_run(replicated, init, c, [&](int, const HmmVbModel& m) { b.push_back(m); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT(max_param_diff(a[i], b[i]), 1e-10) << "iteration " << i;
}

TEST(Fit, MStepIsStationaryUnderFrozenPosteriors) {
  Rng rng(6);
  const HmmVbModel truth = random_model(rng, {2, 1}, {3, 3});
  const Dataset data(sample_model(rng, truth, 200), truth.structure);
  FitConfig c;
  const HmmVbModel init = initialize(data, truth.structure, c);
  const auto ridge = block_ridge(data, c.ridge_factor);
  const SufficientStats st = e_step(CompiledModel(init), data);
  const HmmVbModel once = m_step(st, init, ridge);
  const HmmVbModel twice = m_step(st, once, ridge);
  EXPECT_LT(max_param_diff(once, twice), 1e-12);
}

TEST(Fit, EStepIsThreadCountIndependent) {
  Rng rng(7);
  const HmmVbModel truth = random_model(rng, {1, 2}, {3, 2});
  const Dataset data(sample_model(rng, truth, 1500), truth.structure);
  const CompiledModel cm(truth);
  const SufficientStats a = e_step(cm, data, 1);
  const SufficientStats b = e_step(cm, data, 3);
  EXPECT_EQ(a.log_likelihood, b.log_likelihood);
  EXPECT_EQ(a.transitions[0], b.transitions[0]);
  EXPECT_EQ(a.second[1][1], b.second[1][1]);
}

TEST(Fit, StarvedStateIsFrozen) {
  // A state far from every point gets no posterior mass.
  HmmVbModel m;
  m.structure = BlockStructure({1}, {2});
  m.initial_probs = Vector::Constant(2, 0.5);
  m.emissions = {{{Vector::Zero(1), Matrix::Identity(1, 1)}, {Vector::Constant(1, 1e3), Matrix::Identity(1, 1)}}};
  RowMatrix x(20, 1);
  for (int i = 0; i < 20; ++i) x(i, 0) = 0.1 * i - 1.0;
  const Dataset data(x, m.structure);
  int starved = 0;
  const HmmVbModel next = m_step(e_step(CompiledModel(m), data), m, block_ridge(data, 1e-6), &starved);
  EXPECT_EQ(starved, 1);
  EXPECT_EQ(next.emissions[0][1].mean, m.emissions[0][1].mean);
  EXPECT_EQ(next.emissions[0][1].covariance, m.emissions[0][1].covariance);
}

TEST(Init, SingleStateUsesBlockMoments) {
  Rng rng(8);
  const HmmVbModel truth = random_model(rng, {2, 1}, {1, 1});
  const RowMatrix x = sample_model(rng, truth, 50);
  FitConfig c;
  const HmmVbModel m = initialize(Dataset(x, truth.structure), truth.structure, c);
  const Vector mean = x.colwise().mean().transpose();
  EXPECT_LT((m.emissions[0][0].mean - mean.head(2)).cwiseAbs().maxCoeff(), 1e-12);
  const RowMatrix centered = x.rowwise() - mean.transpose();
  Matrix cov = (centered.transpose() * centered) / 50.0;
  const double ridge0 = reference_ridge(x.leftCols(2), Vector::Ones(50), c.ridge_factor);
  Matrix expect0 = cov.topLeftCorner(2, 2);
  expect0.diagonal().array() += ridge0;
  EXPECT_LT((m.emissions[0][0].covariance - expect0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Init, ShrinkageEndpoints) {
  Rng rng(9);
  const HmmVbModel truth = random_model(rng, {2}, {3}, 3.0);
  const Dataset data(sample_model(rng, truth, 200), truth.structure);
  FitConfig c;
  c.covariance_shrinkage = 0.0;
  const HmmVbModel pooled = initialize(data, truth.structure, c);
  for (int k = 1; k < 3; ++k)
    EXPECT_LT((pooled.emissions[0][k].covariance - pooled.emissions[0][0].covariance).cwiseAbs().maxCoeff(), 1e-12);
  c.covariance_shrinkage = 1.0;
  const HmmVbModel own = initialize(data, truth.structure, c);
  // Cluster-specific covariances: recompute from the induced partition.
  const auto assign = assign_to_centers(data.layout(), [&] {
    RowMatrix centers(3, 2);
    for (int k = 0; k < 3; ++k) centers.row(k) = own.emissions[0][k].mean.transpose();
    return centers;
  }());
  const double ridge = block_ridge(data, c.ridge_factor)[0];
  for (int k = 0; k < 3; ++k) {
    Matrix cov = Matrix::Zero(2, 2);
    double n = 0;
    for (Eigen::Index i = 0; i < data.size(); ++i)
      if (assign[i] == k) {
        const Vector dlt = data.point(i) - own.emissions[0][k].mean;
        cov += dlt * dlt.transpose();
        n += 1;
      }
    cov /= n;
    cov.diagonal().array() += ridge;
    EXPECT_LT((own.emissions[0][k].covariance - cov).cwiseAbs().maxCoeff(), 1e-10);
  }
  EXPECT_TRUE(own.transitions.empty());
  EXPECT_LT((own.initial_probs.array() - 1.0 / 3.0).abs().maxCoeff(), 1e-15);
}

TEST(Init, SchemesAreDeterministicAndDistinct) {
  Rng rng(10);
  const HmmVbModel truth = random_model(rng, {1, 2}, {3, 3}, 3.0);
  const Dataset data(sample_model(rng, truth, 300), truth.structure);
  for (const InitScheme scheme : {InitScheme::kmeans_full(), InitScheme::kmeans_subset(0.3), InitScheme::random_centroids()}) {
    FitConfig c;
    c.init = scheme;
    const HmmVbModel a = initialize(data, truth.structure, c, 0);
    const HmmVbModel b = initialize(data, truth.structure, c, 0);
    EXPECT_EQ(max_param_diff(a, b), 0.0);
    EXPECT_NO_THROW(a.validate());
    const HmmVbModel other = initialize(data, truth.structure, c, 1);
    EXPECT_GT(max_param_diff(a, other), 0.0);
    EXPECT_DOUBLE_EQ(a.transitions[0](0, 0), 1.0 / 3.0);
  }
}

TEST(Init, RejectsTooFewPoints) {
  const BlockStructure s({1}, {5});
  RowMatrix x(3, 1);
  x << 1, 2, 3;
  EXPECT_THROW(initialize(Dataset(x, s), s, FitConfig{}), ValidationError);
}

TEST(KMeans, ReseedsEmptyClusters) {
  RowMatrix pts(6, 1);
  pts << 0, 0.1, 0.2, 10, 10.1, 10.2;
  RowMatrix centers(3, 1);
  centers << 0, 100, 200;  // two centers start with no points
  const KMeansResult r = lloyd(pts, Vector::Ones(6), centers);
  EXPECT_GE(r.reseeds, 1);
  std::vector<int> seen(3, 0);
  for (int a : r.assignment) seen[a] = 1;
  EXPECT_EQ(std::count(seen.begin(), seen.end(), 1), 3);
}

TEST(KMeans, GivesUpAfterTooManyReseeds) {
  RowMatrix pts = RowMatrix::Zero(4, 1);
  RowMatrix centers(3, 1);
  centers << 0, 5, 6;
  EXPECT_THROW(lloyd(pts, Vector::Ones(4), centers, 100, 2), NumericalError);
}

TEST(Bic, DefinitionAndSinglePoint) {
  EXPECT_DOUBLE_EQ(bic(-10.0, 7, 1.0), 20.0);
  Rng rng(11);
  const HmmVbModel m = random_model(rng, {2}, {2});
  RowMatrix x(1, 2);
  x << 0.3, -0.2;
  const Dataset data(x, m.structure);
  EXPECT_DOUBLE_EQ(bic(m, data), -2.0 * log_density(m, x.row(0).transpose()));
  const Dataset many(sample_model(rng, m, 40), m.structure);
  EXPECT_NEAR(bic(m, many), -2.0 * log_likelihood(m, many) + num_free_parameters(m) * std::log(40.0), 1e-9);
}

TEST(NonemptyComponents, CountsViterbiChoices) {
  Rng rng(12);
  const HmmVbModel m = random_model(rng, {1, 1, 2}, {3, 2, 4});
  const Dataset data(sample_model(rng, m, 150), m.structure);
  const ComponentCounts c = count_nonempty_components(m, data);
  std::vector<std::set<int>> used(3);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const BruteForce b = brute_force(m, data.point(i));
    for (int t = 0; t < 3; ++t) used[t].insert(b.sequences[b.argmax][t]);
  }
  int total = 0;
  for (int t = 0; t < 3; ++t) {
    EXPECT_EQ(c.per_block[t], static_cast<int>(used[t].size()));
    total += static_cast<int>(used[t].size());
  }
  EXPECT_EQ(c.total, total);
}

TEST(NonemptyComponents, SinglePointUsesOnePerBlock) {
  Rng rng(13);
  const HmmVbModel m = random_model(rng, {1, 1, 1, 1}, {3, 2, 4, 2});
  RowMatrix x = RowMatrix::Random(1, 4);
  EXPECT_EQ(count_nonempty_components(m, Dataset(x, m.structure)).total, 4);
}

TEST(Select, PicksMinimumBic) {
  Rng rng(14);
  const HmmVbModel truth = random_model(rng, {1, 1}, {2, 2}, 4.0);
  const Dataset data(sample_model(rng, truth, 400), truth.structure);
  FitConfig c;
  c.restarts = 2;
  c.max_iterations = 50;
  SelectOptions so;
  so.count_clusters = true;
  const Selection sel = select_model(data, {{1, 1}, {2, 2}, {3, 1}, {2, 3}}, c, so);
  ASSERT_EQ(sel.rows.size(), 4u);
  int arg = -1;
  for (std::size_t i = 0; i < sel.rows.size(); ++i) {
    ASSERT_TRUE(sel.rows[i].ok);
    ASSERT_TRUE(sel.rows[i].clusters.has_value());
    if (arg < 0 || sel.rows[i].report.bic < sel.rows[arg].report.bic) arg = static_cast<int>(i);
  }
  EXPECT_EQ(sel.best_index, arg);
  const auto sc = sel.best_model.structure.state_counts();
  EXPECT_EQ(std::vector<int>(sc.begin(), sc.end()), sel.rows[arg].state_counts);
}

TEST(Select, OneCellGridAndFailures) {
  Rng rng(15);
  const HmmVbModel truth = random_model(rng, {1}, {2});
  const Dataset data(sample_model(rng, truth, 30), truth.structure);
  FitConfig c;
  c.restarts = 1;
  SelectOptions so;
  so.count_clusters = false;
  const Selection one = select_model(data, {{2}}, c, so);
  EXPECT_EQ(one.rows.size(), 1u);
  EXPECT_EQ(one.best_index, 0);
  const Selection partial = select_model(data, {{50}, {2}}, c, so);
  EXPECT_FALSE(partial.rows[0].ok);
  EXPECT_FALSE(partial.rows[0].error.empty());
  EXPECT_EQ(partial.best_index, 1);
  EXPECT_THROW(select_model(data, {}, c, so), ValidationError);
}

TEST(Select, EqualLikelihoodPrefersFewerParameters) {
  // Same log-likelihood, more parameters: BIC must prefer the smaller model.
  EXPECT_LT(bic(-100.0, 5, 50.0), bic(-100.0, 9, 50.0));
}

TEST(FitConfig, Validation) {
  FitConfig c;
  c.rel_loglik_tolerance = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = FitConfig{};
  c.covariance_shrinkage = 1.5;
  EXPECT_THROW(c.validate(), ValidationError);
  c = FitConfig{};
  c.restarts = 0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Fit, RestartsAreReproducibleAndPickMaximum) {
  Rng rng(16);
  const HmmVbModel truth = random_model(rng, {1, 1}, {3, 3}, 3.0);
  const Dataset data(sample_model(rng, truth, 300), truth.structure);
  FitConfig c;
  c.restarts = 3;
  c.max_iterations = 40;
  c.rng_seed = 99;
  const FitResult a = baum_welch_fit(data, truth.structure, c);
  const FitResult b = baum_welch_fit(data, truth.structure, c);
  EXPECT_EQ(a.report.trace, b.report.trace);
  EXPECT_EQ(a.report.restart_log_likelihoods.size(), 3u);
  EXPECT_EQ(a.report.log_likelihood, *std::max_element(a.report.restart_log_likelihoods.begin(),
                                                       a.report.restart_log_likelihoods.end()));
}
