#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iterator>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hmmvb/inference.hpp"
#include "hmmvb/kmeans.hpp"
#include "hmmvb/modal.hpp"
#include "hmmvb/parallel.hpp"
#include "json.hpp"

namespace hmmvb {

struct InitScheme {
  enum class Kind {
    kmeans_full,       // k-means on all points of each block
    kmeans_subset,     // k-means and statistics on a random subset
    random_centroids,  // M_t random points as centroids, partition of all points
  };
  Kind kind = Kind::kmeans_full;
  double subset_fraction = 0.1;

  static InitScheme kmeans_full() { return {}; }
  static InitScheme kmeans_subset(double fraction) { return {Kind::kmeans_subset, fraction}; }
  static InitScheme random_centroids() { return {Kind::random_centroids, 0.0}; }
};

struct FitConfig {
  int max_iterations = 500;
  double rel_loglik_tolerance = 1e-6;
  /// Ridge added to each covariance, relative to the mean per-variable
  /// variance of the block's data.
  double ridge_factor = 1e-6;
  InitScheme init;
  /// Weight on the cluster-specific covariance at initialization; the rest
  /// goes to the pooled within-cluster covariance.
  double covariance_shrinkage = 0.5;
  int restarts = 5;
  std::uint64_t rng_seed = 0;
  int threads = 1;

  void validate() const {
    if (max_iterations < 0) throw ValidationError("max_iterations", "must be >= 0");
    if (!(rel_loglik_tolerance > 0.0)) throw ValidationError("rel_loglik_tolerance", "must be > 0");
    if (!(ridge_factor >= 0.0)) throw ValidationError("ridge_factor", "must be >= 0");
    if (!(covariance_shrinkage >= 0.0 && covariance_shrinkage <= 1.0))
      throw ValidationError("covariance_shrinkage", "must lie in [0, 1]");
    if (restarts < 1) throw ValidationError("restarts", "must be >= 1");
    if (init.kind == InitScheme::Kind::kmeans_subset && !(init.subset_fraction > 0.0 && init.subset_fraction <= 1.0))
      throw ValidationError("init.subset_fraction", "must lie in (0, 1]");
  }
};

struct FitReport {
  double log_likelihood = 0.0;
  int iterations = 0;
  std::vector<double> trace;  // log-likelihood of each evaluated model
  double bic = 0.0;
  std::int64_t free_parameters = 0;
  std::vector<int> nonempty_per_block;
  int nonempty_total = 0;
  bool converged = false;
  int best_restart = 0;
  std::vector<double> restart_log_likelihoods;
  int starved_updates = 0;  // (state, iteration) pairs frozen for lack of mass
};

struct FitResult {
  HmmVbModel model;
  FitReport report;
};

/// Weighted posterior sums of one E-step. Moments are taken about `shift`
/// (the current state means) to keep the covariance update well conditioned.
struct SufficientStats {
  Vector initial;
  std::vector<Matrix> transitions;  // sum_i w_i alpha_i(t) r_i(t+1)'; times A_t gives sum w H
  std::vector<Vector> occupancy;    // [t](k) = sum_i w_i L_k(x_i, t)
  std::vector<std::vector<Vector>> first;
  std::vector<std::vector<Matrix>> second;
  std::vector<std::vector<Vector>> shift;
  double log_likelihood = 0.0;
  double total_weight = 0.0;

  explicit SufficientStats(const HmmVbModel& m) {
    const BlockStructure& s = m.structure;
    const int T = s.num_blocks();
    initial = Vector::Zero(s.states(0));
    for (int t = 0; t + 1 < T; ++t) transitions.push_back(Matrix::Zero(s.states(t), s.states(t + 1)));
    occupancy.resize(T);
    first.resize(T);
    second.resize(T);
    shift.resize(T);
    for (int t = 0; t < T; ++t) {
      const int d = s.block_dim(t);
      occupancy[t] = Vector::Zero(s.states(t));
      for (int k = 0; k < s.states(t); ++k) {
        first[t].push_back(Vector::Zero(d));
        second[t].push_back(Matrix::Zero(d, d));
        shift[t].push_back(m.emissions[t][k].mean);
      }
    }
  }

  void add(const SufficientStats& o) {
    initial += o.initial;
    for (std::size_t t = 0; t < transitions.size(); ++t) transitions[t] += o.transitions[t];
    for (std::size_t t = 0; t < occupancy.size(); ++t) {
      occupancy[t] += o.occupancy[t];
      for (std::size_t k = 0; k < first[t].size(); ++k) {
        first[t][k] += o.first[t][k];
        second[t][k] += o.second[t][k];
      }
    }
    log_likelihood += o.log_likelihood;
    total_weight += o.total_weight;
  }
};

inline constexpr Eigen::Index kEStepChunk = 256;

/// E-step: forward-backward on every point, accumulating weighted posterior
/// sums. Points are processed in fixed-size chunks that are reduced in
/// order, so results do not depend on the thread count.
inline SufficientStats e_step(const CompiledModel& cm, const Dataset& data, int threads = 1) {
  const HmmVbModel& model = cm.model();
  const BlockStructure& s = model.structure;
  const int T = s.num_blocks();
  const Eigen::Index n = data.size();
  const std::size_t chunks = static_cast<std::size_t>((n + kEStepChunk - 1) / kEStepChunk);
  std::vector<std::optional<SufficientStats>> partial(chunks);

  parallel_for(chunks, threads, [&](std::size_t c) {
    SufficientStats acc(model);
    ForwardBackward fb;
    fb.resize(s);
    Vector diff(std::max(1, s.dim()));
    Vector right(s.max_states());
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * kEStepChunk;
    const Eigen::Index end = std::min(n, begin + kEStepChunk);
    for (Eigen::Index i = begin; i < end; ++i) {
      const double w = data.weights()[i];
      const double* x = data.layout().row(i).data();
      try {
        fb.run(cm, x);
      } catch (const NumericalError& e) {
        throw NumericalError("point " + std::to_string(i) + ": " + e.what(), e.block(), e.state());
      }
      acc.log_likelihood += w * fb.log_evidence;
      acc.total_weight += w;
      for (int t = 0; t < T; ++t) {
        const int d = s.block_dim(t);
        const double* xt = x + s.offset(t);
        for (int k = 0; k < s.states(t); ++k) {
          const double g = w * fb.alpha[t][k] * fb.beta[t][k];
          if (g == 0.0) continue;
          acc.occupancy[t][k] += g;
          const Vector& c0 = acc.shift[t][k];
          for (int a = 0; a < d; ++a) diff[a] = xt[a] - c0[a];
          Vector& f = acc.first[t][k];
          Matrix& sq = acc.second[t][k];
          for (int a = 0; a < d; ++a) {
            f[a] += g * diff[a];
            const double ga = g * diff[a];
            for (int b = 0; b <= a; ++b) sq(a, b) += ga * diff[b];
          }
        }
        if (t == 0) acc.initial += w * fb.alpha[0].cwiseProduct(fb.beta[0]);
        if (t + 1 < T) {
          const Eigen::Index next = s.states(t + 1);
          right.head(next) = fb.emission[t + 1].cwiseProduct(fb.beta[t + 1]) / fb.scale[t + 1];
          acc.transitions[t].noalias() += (w * fb.alpha[t]) * right.head(next).transpose();
        }
      }
    }
    partial[c].emplace(std::move(acc));
  });

  SufficientStats total(model);
  for (auto& p : partial) total.add(*p);
  for (int t = 0; t + 1 < T; ++t) total.transitions[t] = total.transitions[t].cwiseProduct(model.transitions[t]);
  for (int t = 0; t < T; ++t)
    for (auto& sq : total.second[t]) sq = sq.selfadjointView<Eigen::Lower>();
  return total;
}

/// Per-block ridge: factor times the mean per-variable weighted variance.
inline std::vector<double> block_ridge(const Dataset& data, double factor) {
  const BlockStructure& s = data.structure();
  const Vector sd = data.column_scale();
  std::vector<double> out(s.num_blocks());
  for (int t = 0; t < s.num_blocks(); ++t)
    out[t] = factor * sd.segment(s.offset(t), s.block_dim(t)).squaredNorm() / s.block_dim(t);
  return out;
}

/// States whose weighted occupancy falls below this fraction of the total
/// weight keep their previous parameters.
inline constexpr double kStarvedFraction = 1e-12;

/// M-step: the weighted Baum-Welch updates for pi, A_t and each state's
/// Gaussian, followed by the covariance ridge. Returns the count of frozen
/// (starved) states through `starved` when given.
inline HmmVbModel m_step(const SufficientStats& st, const HmmVbModel& current, const std::vector<double>& ridge,
                         int* starved = nullptr) {
  const BlockStructure& s = current.structure;
  const int T = s.num_blocks();
  const double floor = kStarvedFraction * st.total_weight;
  HmmVbModel next = current;
  int frozen = 0;

  next.initial_probs = st.initial / st.initial.sum();
  for (int t = 0; t + 1 < T; ++t) {
    for (int k = 0; k < s.states(t); ++k) {
      const double row = st.transitions[t].row(k).sum();
      if (st.occupancy[t][k] < floor || !(row > 0.0)) continue;
      next.transitions[t].row(k) = st.transitions[t].row(k) / row;
    }
  }
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < s.states(t); ++k) {
      const double mass = st.occupancy[t][k];
      if (mass < floor) {
        ++frozen;
        continue;
      }
      const Vector delta = st.first[t][k] / mass;
      Matrix cov = st.second[t][k] / mass - delta * delta.transpose();
      cov = 0.5 * (cov + cov.transpose());
      cov.diagonal().array() += ridge[t];
      GaussianParams& g = next.emissions[t][k];
      g.mean = st.shift[t][k] + delta;
      g.covariance = std::move(cov);
    }
  }
  if (starved) *starved = frozen;
  return next;
}

namespace detail {

inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x6d6d7662u};
  return std::mt19937_64(seq);
}

inline RowMatrix block_columns(const Dataset& data, int t, const std::vector<Eigen::Index>& rows) {
  const BlockStructure& s = data.structure();
  RowMatrix out(rows.size(), s.block_dim(t));
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(r) = data.block(rows[r], t);
  return out;
}

}  // namespace detail

/// Initial model: per block, a partition of the points (scheme-dependent)
/// gives component means and covariances shrunk toward the pooled
/// within-cluster covariance. Transitions and pi start uniform.
inline HmmVbModel initialize(const Dataset& data, const BlockStructure& structure, const FitConfig& config,
                             std::uint64_t stream = 0) {
  config.validate();
  if (!structure.same_layout(data.structure()))
    throw ValidationError("structure", "block layout does not match the dataset");
  const int T = structure.num_blocks();
  const Eigen::Index n = data.size();
  for (int t = 0; t < T; ++t)
    if (structure.states(t) > n)
      throw ValidationError("state_counts[" + std::to_string(t) + "]",
                            "exceeds the number of points " + std::to_string(n));
  auto rng = detail::seeded_rng(config.rng_seed, stream);
  const std::vector<double> ridge = block_ridge(data, config.ridge_factor);
  const double lambda = config.covariance_shrinkage;

  HmmVbModel model;
  model.structure = structure;
  model.initial_probs = Vector::Constant(structure.states(0), 1.0 / structure.states(0));
  for (int t = 0; t + 1 < T; ++t)
    model.transitions.push_back(
        Matrix::Constant(structure.states(t), structure.states(t + 1), 1.0 / structure.states(t + 1)));
  model.emissions.resize(T);

  std::vector<Eigen::Index> all(n);
  std::iota(all.begin(), all.end(), Eigen::Index{0});

  for (int t = 0; t < T; ++t) {
    const int m = structure.states(t);
    const int d = structure.block_dim(t);
    std::vector<Eigen::Index> rows = all;
    std::vector<int> assignment;
    if (m == 1) {
      assignment.assign(n, 0);
    } else if (config.init.kind == InitScheme::Kind::random_centroids) {
      std::vector<Eigen::Index> picked;
      std::sample(all.begin(), all.end(), std::back_inserter(picked), m, rng);
      RowMatrix points = detail::block_columns(data, t, all);
      RowMatrix centers = detail::block_columns(data, t, picked);
      assignment = lloyd(points, data.weights(), std::move(centers), 0).assignment;
    } else {
      if (config.init.kind == InitScheme::Kind::kmeans_subset) {
        const auto size = std::max<Eigen::Index>(
            m, static_cast<Eigen::Index>(std::llround(config.init.subset_fraction * static_cast<double>(n))));
        rows.clear();
        std::sample(all.begin(), all.end(), std::back_inserter(rows), std::min(size, n), rng);
      }
      RowMatrix points = detail::block_columns(data, t, rows);
      Vector w(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) w[r] = data.weights()[rows[r]];
      assignment = kmeans(points, w, m, rng).assignment;
    }

    std::vector<Vector> means(m, Vector::Zero(d));
    std::vector<Matrix> covs(m, Matrix::Zero(d, d));
    Vector mass = Vector::Zero(m);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double w = data.weights()[rows[r]];
      means[assignment[r]] += w * data.block(rows[r], t).transpose();
      mass[assignment[r]] += w;
    }
    for (int k = 0; k < m; ++k) {
      if (!(mass[k] > 0.0))
        throw NumericalError("initialization left state " + std::to_string(k) + " of block " + std::to_string(t) +
                                 " empty",
                             t, k);
      means[k] /= mass[k];
    }
    Matrix pooled = Matrix::Zero(d, d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Vector diff = data.block(rows[r], t).transpose() - means[assignment[r]];
      covs[assignment[r]].noalias() += data.weights()[rows[r]] * diff * diff.transpose();
    }
    for (int k = 0; k < m; ++k) pooled += covs[k];
    pooled /= mass.sum();
    for (int k = 0; k < m; ++k) {
      Matrix cov = lambda * (covs[k] / mass[k]) + (1.0 - lambda) * pooled;
      cov = 0.5 * (cov + cov.transpose());
      cov.diagonal().array() += ridge[t];
      model.emissions[t].push_back(GaussianParams{means[k], std::move(cov)});
    }
  }
  return model;
}

/// Called after every M-step with the iteration number and new model.
using IterationObserver = std::function<void(int, const HmmVbModel&)>;

/// Baum-Welch from a given initial model. The returned model is the last one
/// whose log-likelihood was evaluated.
inline FitResult baum_welch_run(const Dataset& data, HmmVbModel model, const FitConfig& config,
                                const IterationObserver& observer = {}) {
  config.validate();
  model.validate(1e-8);
  const std::vector<double> ridge = block_ridge(data, config.ridge_factor);
  FitResult result;
  FitReport& rep = result.report;
  double previous = std::numeric_limits<double>::quiet_NaN();
  for (;;) {
    CompiledModel cm(model);
    SufficientStats st = e_step(cm, data, config.threads);
    const double ll = st.log_likelihood;
    if (!std::isfinite(ll)) throw NumericalError("log-likelihood is not finite");
    rep.trace.push_back(ll);
    if (std::isfinite(previous) && std::abs(ll - previous) / (1.0 + std::abs(ll)) < config.rel_loglik_tolerance) {
      rep.converged = true;
      break;
    }
    if (rep.iterations >= config.max_iterations) break;
    previous = ll;
    int starved = 0;
    model = m_step(st, model, ridge, &starved);
    rep.starved_updates += starved;
    ++rep.iterations;
    if (observer) observer(rep.iterations, model);
  }
  rep.log_likelihood = rep.trace.back();
  result.model = std::move(model);
  return result;
}

inline double bic(double log_likelihood, std::int64_t free_parameters, double total_weight) {
  return -2.0 * log_likelihood + static_cast<double>(free_parameters) * std::log(total_weight);
}

/// -2 log-likelihood + (free parameters) log(sum of weights).
inline double bic(const HmmVbModel& model, const Dataset& data) {
  return bic(log_likelihood(model, data), num_free_parameters(model), data.total_weight());
}

struct ComponentCounts {
  std::vector<int> per_block;
  int total = 0;
};

/// Components chosen by at least one point's Viterbi path.
inline ComponentCounts count_nonempty_components(const std::vector<std::vector<int>>& paths,
                                                 const BlockStructure& s) {
  ComponentCounts out;
  std::vector<std::vector<char>> used(s.num_blocks());
  for (int t = 0; t < s.num_blocks(); ++t) used[t].assign(s.states(t), 0);
  for (const auto& p : paths)
    for (int t = 0; t < s.num_blocks(); ++t) used[t][p[t]] = 1;
  for (int t = 0; t < s.num_blocks(); ++t) {
    out.per_block.push_back(static_cast<int>(std::count(used[t].begin(), used[t].end(), 1)));
    out.total += out.per_block.back();
  }
  return out;
}

inline ComponentCounts count_nonempty_components(const HmmVbModel& model, const Dataset& data, int threads = 1) {
  return count_nonempty_components(decode_all(CompiledModel(model), data, threads), model.structure);
}

/// Fits `config.restarts` models from independently seeded initializations
/// and keeps the one with the highest final log-likelihood.
inline FitResult baum_welch_fit(const Dataset& data, const BlockStructure& structure, const FitConfig& config,
                                const IterationObserver& observer = {}) {
  config.validate();
  const Dataset view = data.with_structure(structure);
  std::optional<FitResult> best;
  std::vector<double> finals;
  for (int r = 0; r < config.restarts; ++r) {
    HmmVbModel init = initialize(view, structure, config, static_cast<std::uint64_t>(r));
    FitResult fit = baum_welch_run(view, std::move(init), config, observer);
    finals.push_back(fit.report.log_likelihood);
    if (!best || fit.report.log_likelihood > best->report.log_likelihood) {
      best = std::move(fit);
      best->report.best_restart = r;
    }
  }
  FitReport& rep = best->report;
  rep.restart_log_likelihoods = std::move(finals);
  rep.free_parameters = num_free_parameters(structure);
  rep.bic = bic(rep.log_likelihood, rep.free_parameters, view.total_weight());
  const ComponentCounts counts = count_nonempty_components(best->model, view, config.threads);
  rep.nonempty_per_block = counts.per_block;
  rep.nonempty_total = counts.total;
  return std::move(*best);
}

inline nlohmann::json report_to_json(const FitReport& r) {
  return nlohmann::json{{"log_likelihood", r.log_likelihood},
                        {"iterations", r.iterations},
                        {"converged", r.converged},
                        {"bic", r.bic},
                        {"free_parameters", r.free_parameters},
                        {"nonempty_per_block", r.nonempty_per_block},
                        {"nonempty_total", r.nonempty_total},
                        {"best_restart", r.best_restart},
                        {"restart_log_likelihoods", r.restart_log_likelihoods},
                        {"starved_updates", r.starved_updates},
                        {"trace", r.trace}};
}

struct SelectOptions {
  /// Run modal clustering on each fitted cell to report its cluster count.
  bool count_clusters = true;
  ModeSearchConfig mode_search;
  /// Among cells whose cluster count equals the min-BIC cell's, pick the one
  /// with fewest free parameters.
  bool prefer_simplest = false;
};

struct SelectionRow {
  std::vector<int> state_counts;
  bool ok = false;
  std::string error;
  FitReport report;
  std::optional<int> clusters;
};

struct Selection {
  std::vector<SelectionRow> rows;
  int best_index = -1;
  HmmVbModel best_model;
};

/// Fits every grid cell (state counts over the dataset's block layout) and
/// returns the min-BIC cell. Failed cells are recorded, not fatal, unless
/// every cell fails.
inline Selection select_model(const Dataset& data, const std::vector<std::vector<int>>& grid,
                              const FitConfig& config, const SelectOptions& options = {}) {
  if (grid.empty()) throw ValidationError("grid", "must contain at least one cell");
  Selection sel;
  std::vector<std::optional<HmmVbModel>> models(grid.size());
  for (std::size_t c = 0; c < grid.size(); ++c) {
    SelectionRow row;
    row.state_counts = grid[c];
    try {
      const BlockStructure structure = data.structure().with_state_counts(grid[c]);
      FitResult fit = baum_welch_fit(data, structure, config);
      row.report = fit.report;
      if (options.count_clusters || options.prefer_simplest) {
        ModeSearchConfig mc = options.mode_search;
        mc.threads = config.threads;
        row.clusters = cluster(fit.model, data.with_structure(structure), mc).num_clusters();
      }
      row.ok = true;
      models[c] = std::move(fit.model);
    } catch (const Error& e) {
      row.error = e.what();
    }
    sel.rows.push_back(std::move(row));
  }
  for (std::size_t c = 0; c < sel.rows.size(); ++c) {
    if (!sel.rows[c].ok) continue;
    if (sel.best_index < 0 || sel.rows[c].report.bic < sel.rows[sel.best_index].report.bic)
      sel.best_index = static_cast<int>(c);
  }
  if (sel.best_index < 0) throw Error("model selection: every grid cell failed");
  if (options.prefer_simplest) {
    const SelectionRow& b = sel.rows[sel.best_index];
    for (std::size_t c = 0; c < sel.rows.size(); ++c) {
      const SelectionRow& r = sel.rows[c];
      if (r.ok && r.clusters == b.clusters &&
          r.report.free_parameters < sel.rows[sel.best_index].report.free_parameters)
        sel.best_index = static_cast<int>(c);
    }
  }
  sel.best_model = *models[sel.best_index];
  return sel;
}

}  // namespace hmmvb
