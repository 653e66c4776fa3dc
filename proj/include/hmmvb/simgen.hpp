#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hmmvb/modal.hpp"
#include "hmmvb/model.hpp"
#include "hmmvb/sim_constants.hpp"

namespace hmmvb {

enum class Regime { two_block, three_block, flat_gmm_50 };

inline std::string regime_name(Regime r) {
  switch (r) {
    case Regime::two_block: return "two-block";
    case Regime::three_block: return "three-block";
    case Regime::flat_gmm_50: return "flat-gmm-50";
  }
  return "?";
}

inline Regime parse_regime(const std::string& name) {
  if (name == "two-block") return Regime::two_block;
  if (name == "three-block") return Regime::three_block;
  if (name == "flat-gmm-50") return Regime::flat_gmm_50;
  throw ValidationError("regime", "unknown regime '" + name + "' (two-block, three-block, flat-gmm-50)");
}

struct SimSpec {
  Regime regime = Regime::flat_gmm_50;
  Eigen::Index n = 10000;
  std::uint64_t seed = 0;
};

/// Simulated points in raw column order with their generating labels.
struct LabeledSample {
  RowMatrix points;
  /// Generating component, 1-based. Block regimes flatten the first- and
  /// second-block components as (s1 - 1) * 10 + s2.
  std::vector<int> component;
  /// 0 for background, j >= 1 for the j-th rare target.
  std::vector<int> target_class;
  /// Generating mean of each target class (raw units, raw column order).
  std::vector<Vector> target_means;
  /// Natural block partition of the regime.
  std::vector<int> block_dims;

  Eigen::Index size() const { return points.rows(); }
  int num_targets() const { return static_cast<int>(target_means.size()); }
  std::vector<std::size_t> target_counts() const {
    std::vector<std::size_t> counts(target_means.size() + 1, 0);
    for (int c : target_class) ++counts[c];
    return counts;
  }
};

namespace detail {

inline std::mt19937_64 sim_rng(std::uint64_t seed, Regime regime) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(regime), 0x73696d67u};
  return std::mt19937_64(seq);
}

template <typename Rng>
Vector standard_normal(Rng& rng, int d) {
  std::normal_distribution<double> z(0.0, 1.0);
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = z(rng);
  return v;
}

}  // namespace detail

/// Inverse-Wishart draw with `dof` degrees of freedom and scale matrix
/// `scale` (mean scale / (dof - p - 1)), via the Bartlett decomposition of
/// the Wishart(dof, scale^{-1}) precision.
template <typename Rng>
Matrix sample_inverse_wishart(Rng& rng, double dof, const Matrix& scale) {
  const int p = static_cast<int>(scale.rows());
  if (!(dof > p - 1)) throw ValidationError("dof", "must exceed dimension - 1");
  const Matrix scale_inv = scale.llt().solve(Matrix::Identity(p, p));
  const Matrix chol = scale_inv.llt().matrixL();
  Matrix bartlett = Matrix::Zero(p, p);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int i = 0; i < p; ++i) {
    std::chi_squared_distribution<double> chi2(dof - i);
    bartlett(i, i) = std::sqrt(chi2(rng));
    for (int j = 0; j < i; ++j) bartlett(i, j) = z(rng);
  }
  const Matrix factor = chol * bartlett;
  const Matrix precision = factor * factor.transpose();
  Matrix cov = precision.llt().solve(Matrix::Identity(p, p));
  return 0.5 * (cov + cov.transpose());
}

/// 50-component, 10-dimensional mixture with two rare, well-separated
/// components (means +5 and -5 in every variable, identity covariance).
/// The other means are N(0, I) draws; their covariances are inverse-Wishart
/// with 15 degrees of freedom and scale 5I.
inline LabeledSample generate_flat_gmm_50(Eigen::Index n, std::uint64_t seed) {
  using namespace sim;
  if (n < 1) throw ValidationError("n", "must be >= 1");
  auto rng = detail::sim_rng(seed, Regime::flat_gmm_50);
  const int d = kFlatDim;
  std::vector<double> priors(kFlatLeadingPriors.begin(), kFlatLeadingPriors.end());
  const double rest = 0.7125 / 44.0;
  priors.resize(kFlatComponents, rest);

  std::vector<Vector> means(kFlatComponents);
  std::vector<Matrix> chol(kFlatComponents);
  means[0] = Vector::Constant(d, kFlatRareMean);
  means[1] = Vector::Constant(d, -kFlatRareMean);
  chol[0] = Matrix::Identity(d, d);
  chol[1] = Matrix::Identity(d, d);
  for (int k = 2; k < kFlatComponents; ++k) means[k] = detail::standard_normal(rng, d);
  const Matrix scale = kFlatWishartScale * Matrix::Identity(d, d);
  for (int k = 2; k < kFlatComponents; ++k)
    chol[k] = sample_inverse_wishart(rng, kFlatWishartDof, scale).llt().matrixL();

  LabeledSample out;
  out.points.resize(n, d);
  out.component.resize(n);
  out.target_class.resize(n);
  out.target_means = {means[0], means[1]};
  out.block_dims.assign(d, 1);
  std::discrete_distribution<int> pick(priors.begin(), priors.end());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int k = pick(rng);
    out.points.row(i) = (means[k] + chol[k] * detail::standard_normal(rng, d)).transpose();
    out.component[i] = k + 1;
    out.target_class[i] = k < 2 ? k + 1 : 0;
  }
  return out;
}

namespace detail {

template <typename Rng>
void draw_block_pair(Rng& rng, std::discrete_distribution<int>& first, std::vector<std::discrete_distribution<int>>& second,
                     double* row, int& s1, int& s2) {
  using namespace sim;
  std::normal_distribution<double> z(0.0, 1.0);
  s1 = first(rng);
  for (int j = 0; j < kFirstBlockDim; ++j)
    row[j] = kFirstBlockMeans[s1][j] + std::sqrt(kFirstBlockVariance[s1]) * z(rng);
  s2 = second[s1](rng);
  for (int j = 0; j < kSecondBlockDim; ++j)
    row[kFirstBlockDim + j] = kSecondBlockMeans[s2][j] + std::sqrt(kSecondBlockVariance[s2]) * z(rng);
}

inline bool is_block_target(int s1, int s2) {
  using namespace sim;
  const bool rare = s1 == kRareFirstBlock[0] || s1 == kRareFirstBlock[1];
  const bool high = s2 == kHighSecondBlock[0] || s2 == kHighSecondBlock[1];
  return rare && high;
}

/// Mean of the target region: rare first-block means weighted by their
/// proportions, followed by the high second-block means weighted by their
/// transition probabilities from those rare states.
inline Vector block_target_mean() {
  using namespace sim;
  Vector mean = Vector::Zero(kFirstBlockDim + kSecondBlockDim);
  double total = 0.0;
  for (int a : kRareFirstBlock)
    for (int b : kHighSecondBlock) {
      const double w = kFirstBlockProportions[a] * kTransitions[a][b];
      for (int j = 0; j < kFirstBlockDim; ++j) mean[j] += w * kFirstBlockMeans[a][j];
      for (int j = 0; j < kSecondBlockDim; ++j) mean[kFirstBlockDim + j] += w * kSecondBlockMeans[b][j];
      total += w;
    }
  return mean / total;
}

inline LabeledSample generate_blocks(Eigen::Index n, std::uint64_t seed, bool leading_block) {
  using namespace sim;
  if (n < 1) throw ValidationError("n", "must be >= 1");
  auto rng = sim_rng(seed, leading_block ? Regime::three_block : Regime::two_block);
  const int lead = leading_block ? kLeadingBlockDim : 0;
  const int d = lead + kFirstBlockDim + kSecondBlockDim;
  std::discrete_distribution<int> first(kFirstBlockProportions.begin(), kFirstBlockProportions.end());
  std::vector<std::discrete_distribution<int>> second;
  for (const auto& row : kTransitions) second.emplace_back(row.begin(), row.end());
  std::normal_distribution<double> z(0.0, 1.0);

  LabeledSample out;
  out.points.resize(n, d);
  out.component.resize(n);
  out.target_class.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double* row = out.points.row(i).data();
    for (int j = 0; j < lead; ++j) row[j] = std::sqrt(kLeadingBlockVariance) * z(rng);
    int s1 = 0, s2 = 0;
    draw_block_pair(rng, first, second, row + lead, s1, s2);
    out.component[i] = s1 * kSecondBlockComponents + s2 + 1;
    out.target_class[i] = is_block_target(s1, s2) ? 1 : 0;
  }
  Vector target = Vector::Zero(d);
  target.tail(kFirstBlockDim + kSecondBlockDim) = block_target_mean();
  out.target_means = {target};
  if (leading_block) out.block_dims = {kLeadingBlockDim, kFirstBlockDim, kSecondBlockDim};
  else out.block_dims = {kFirstBlockDim, kSecondBlockDim};
  return out;
}

}  // namespace detail

/// Two blocks (5 + 3 variables) linked by a first-to-second-block transition
/// table; the target is a rare first-block state followed by a high
/// second-block state.
inline LabeledSample generate_two_block(Eigen::Index n, std::uint64_t seed) {
  return detail::generate_blocks(n, seed, false);
}

/// The two-block regime preceded by five independent N(0, 3) variables.
inline LabeledSample generate_three_block(Eigen::Index n, std::uint64_t seed) {
  return detail::generate_blocks(n, seed, true);
}

inline LabeledSample generate(const SimSpec& spec) {
  switch (spec.regime) {
    case Regime::two_block: return generate_two_block(spec.n, spec.seed);
    case Regime::three_block: return generate_three_block(spec.n, spec.seed);
    case Regime::flat_gmm_50: return generate_flat_gmm_50(spec.n, spec.seed);
  }
  throw ValidationError("regime", "unknown");
}

/// Rows: 0 = background, j = the cluster matched to target j. Columns: true
/// class 0 (background), 1, 2, ...
struct ConfusionMatrix {
  std::vector<int> target_clusters;
  std::vector<std::vector<std::size_t>> counts;

  std::size_t column_total(int c) const {
    std::size_t s = 0;
    for (const auto& row : counts) s += row[c];
    return s;
  }
  std::size_t row_total(int r) const {
    std::size_t s = 0;
    for (std::size_t v : counts[r]) s += v;
    return s;
  }
  double recall(int j) const {
    const std::size_t total = column_total(j);
    return total == 0 ? 0.0 : static_cast<double>(counts[j][j]) / static_cast<double>(total);
  }
  double precision(int j) const {
    const std::size_t total = row_total(j);
    return total == 0 ? 0.0 : static_cast<double>(counts[j][j]) / static_cast<double>(total);
  }
  bool targets_distinct() const {
    for (std::size_t a = 0; a < target_clusters.size(); ++a)
      for (std::size_t b = a + 1; b < target_clusters.size(); ++b)
        if (target_clusters[a] == target_clusters[b]) return false;
    return true;
  }
};

/// Matches each target class to the cluster whose mode is nearest the
/// class mean (unless `target_map` gives the clusters explicitly) and counts
/// points. `cluster_modes` must be in the same units and column order as
/// the sample.
inline ConfusionMatrix confusion_matrix(const std::vector<int>& labels, const std::vector<Vector>& cluster_modes,
                                        const LabeledSample& truth,
                                        const std::optional<std::vector<int>>& target_map = std::nullopt) {
  if (labels.size() != static_cast<std::size_t>(truth.size()))
    throw ValidationError("labels", "length does not match the labeled sample");
  const int targets = truth.num_targets();
  ConfusionMatrix cm;
  if (target_map) {
    if (static_cast<int>(target_map->size()) != targets)
      throw ValidationError("target_map", "expected one cluster per target");
    cm.target_clusters = *target_map;
  } else {
    if (cluster_modes.empty()) throw ValidationError("cluster_modes", "no clusters");
    for (int j = 0; j < targets; ++j) {
      double best = std::numeric_limits<double>::infinity();
      int arg = -1;
      bool tie = false;
      for (std::size_t c = 0; c < cluster_modes.size(); ++c) {
        const double dist = (cluster_modes[c] - truth.target_means[j]).norm();
        if (dist < best * (1.0 - 1e-12)) {
          best = dist;
          arg = static_cast<int>(c);
          tie = false;
        } else if (dist <= best * (1.0 + 1e-12)) {
          tie = true;
        }
      }
      if (tie)
        throw ValidationError("target_map", "nearest mode to target " + std::to_string(j + 1) +
                                                " is ambiguous; pass an explicit target map");
      cm.target_clusters.push_back(arg);
    }
  }
  cm.counts.assign(targets + 1, std::vector<std::size_t>(targets + 1, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int truth_class = truth.target_class[i];
    // A cluster claimed by several targets counts under the first.
    int row = 0;
    for (int j = 0; j < targets && row == 0; ++j)
      if (labels[i] == cm.target_clusters[j]) row = j + 1;
    ++cm.counts[row][truth_class];
  }
  return cm;
}

/// Cluster modes converted to raw column order and raw units.
inline std::vector<Vector> raw_cluster_modes(const ClusteringResult& result, const HmmVbModel& model) {
  std::vector<Vector> out;
  for (const Vector& m : result.cluster_modes) {
    Vector raw = model.structure.to_raw(m);
    if (model.standardization) raw = model.standardization->invert(raw);
    out.push_back(std::move(raw));
  }
  return out;
}

inline ConfusionMatrix confusion_matrix(const ClusteringResult& result, const HmmVbModel& model,
                                        const LabeledSample& truth,
                                        const std::optional<std::vector<int>>& target_map = std::nullopt) {
  return confusion_matrix(result.labels, raw_cluster_modes(result, model), truth, target_map);
}

}  // namespace hmmvb
