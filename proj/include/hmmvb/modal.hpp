#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

#include "hmmvb/inference.hpp"

namespace hmmvb {

enum class StartMode {
  viterbi_means,  // one search per distinct Viterbi sequence, from its concatenated means
  data_points,    // one search per data point
};

struct ModeSearchConfig {
  int max_iterations = 1000;
  /// Stop when max_j |x'_j - x_j| / scale_j falls below this.
  double tolerance = 1e-8;
  /// Modes closer than this in every scaled coordinate are merged.
  double merge_tolerance = 1e-3;
  StartMode start_mode = StartMode::viterbi_means;
  /// In viterbi_means mode, switch to data_points once the number of distinct
  /// sequences exceeds this fraction of n. Disabled when unset.
  std::optional<double> switch_fraction = 0.5;
  /// Per-dimension scale in layout order. Empty: derived from the data in
  /// cluster() and from the model in find_mode().
  Vector scale;
  int threads = 1;
};

/// Posterior-weighted per-block precision and precision-weighted mean; the
/// update solves precision * x' = rhs block by block.
struct BlockwiseUpdate {
  ForwardBackward fb;
  Matrix precision;
  Vector rhs;

  /// Runs one MBW step from x into `out`; returns log f(x).
  double step(const CompiledModel& cm, const double* x, double* out) {
    const BlockStructure& s = cm.structure();
    fb.resize(s);
    fb.compute_emissions(cm, x);
    fb.forward(cm);
    fb.backward(cm);
    for (int t = 0; t < s.num_blocks(); ++t) {
      const int d = s.block_dim(t);
      const Vector post = fb.state_posterior(t);
      if (d == 1) {
        double p = 0.0, r = 0.0;
        for (int k = 0; k < s.states(t); ++k) {
          p += post[k] * cm.density(t, k).precision()(0, 0);
          r += post[k] * cm.density(t, k).precision_mean()[0];
        }
        out[s.offset(t)] = r / p;
        continue;
      }
      precision.setZero(d, d);
      rhs.setZero(d);
      for (int k = 0; k < s.states(t); ++k) {
        if (post[k] == 0.0) continue;
        precision.noalias() += post[k] * cm.density(t, k).precision();
        rhs.noalias() += post[k] * cm.density(t, k).precision_mean();
      }
      Eigen::LLT<Matrix> llt(precision);
      if (llt.info() != Eigen::Success)
        throw NumericalError("aggregated precision of block " + std::to_string(t) + " is not positive definite", t);
      Eigen::Map<Vector>(out + s.offset(t), d) = llt.solve(rhs);
    }
    return fb.log_evidence;
  }
};

/// One Modal Baum-Welch update of a point in block layout.
inline Vector mbw_step(const CompiledModel& cm, const Eigen::Ref<const Vector>& x) {
  if (x.size() != cm.structure().dim()) throw ValidationError("point", "dimension does not match model");
  BlockwiseUpdate update;
  Vector out(x.size());
  update.step(cm, x.data(), out.data());
  return out;
}

inline Vector mbw_step(const HmmVbModel& model, const Eigen::Ref<const Vector>& x) {
  return mbw_step(CompiledModel(model), x);
}

/// Per-dimension standard deviation of the model's marginal density, in
/// layout order.
inline Vector dimension_scale(const HmmVbModel& model) {
  const BlockStructure& s = model.structure;
  Vector out(s.dim());
  Vector marginal = model.initial_probs;
  for (int t = 0; t < s.num_blocks(); ++t) {
    if (t > 0) marginal = model.transitions[t - 1].transpose() * marginal;
    const int d = s.block_dim(t);
    Vector mean = Vector::Zero(d);
    Vector second = Vector::Zero(d);
    for (int k = 0; k < s.states(t); ++k) {
      const GaussianParams& g = model.emissions[t][k];
      mean += marginal[k] * g.mean;
      second += marginal[k] * (g.covariance.diagonal() + g.mean.cwiseAbs2());
    }
    Vector var = second - mean.cwiseAbs2();
    for (int j = 0; j < d; ++j) out[s.offset(t) + j] = var[j] > 0.0 ? std::sqrt(var[j]) : 1.0;
  }
  return out;
}

struct ModeResult {
  Vector mode;
  int iterations = 0;
  bool converged = false;
  double start_log_density = 0.0;
  double log_density = 0.0;
};

/// Iterates mbw_step from x0 until the scaled movement drops below the
/// tolerance. A non-converged search returns its last iterate.
inline ModeResult find_mode(const CompiledModel& cm, const Eigen::Ref<const Vector>& x0,
                            const ModeSearchConfig& config, const Vector& scale) {
  const int d = cm.structure().dim();
  if (x0.size() != d) throw ValidationError("start", "dimension does not match model");
  if (!x0.allFinite()) throw ValidationError("start", "non-finite start point");
  BlockwiseUpdate update;
  ModeResult result;
  Vector x = x0;
  Vector next(d);
  for (int it = 0; it < config.max_iterations; ++it) {
    const double logf = update.step(cm, x.data(), next.data());
    if (it == 0) result.start_log_density = logf;
    result.iterations = it + 1;
    const double movement = ((next - x).cwiseAbs().cwiseQuotient(scale)).maxCoeff();
    x.swap(next);
    if (movement < config.tolerance) {
      result.converged = true;
      break;
    }
  }
  result.mode = std::move(x);
  result.log_density = log_density(cm, result.mode);
  if (config.max_iterations <= 0) result.start_log_density = result.log_density;
  return result;
}

inline ModeResult find_mode(const HmmVbModel& model, const Eigen::Ref<const Vector>& x0,
                            const ModeSearchConfig& config = {}) {
  CompiledModel cm(model);
  const Vector scale = config.scale.size() == model.structure.dim() ? config.scale : dimension_scale(model);
  return find_mode(cm, x0, config, scale);
}

/// Output of modal clustering. Mode coordinates are in block layout order.
struct ClusteringResult {
  std::vector<std::vector<int>> sequences;  // Viterbi path per point
  std::vector<int> mode_index;              // point -> search index
  std::vector<int> labels;                  // point -> cluster
  std::vector<ModeResult> searches;         // one per distinct start
  std::vector<int> search_cluster;          // search -> cluster
  std::vector<Vector> cluster_modes;        // representative mode per cluster
  std::vector<std::size_t> cluster_sizes;
  StartMode start_mode = StartMode::viterbi_means;
  std::size_t distinct_sequences = 0;

  int num_clusters() const { return static_cast<int>(cluster_modes.size()); }
  bool converged(std::size_t point) const { return searches[mode_index[point]].converged; }
};

namespace detail {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t a) {
    while (parent_[a] != a) a = parent_[a] = parent_[parent_[a]];
    return a;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

inline bool lexicographic_less(const Vector& a, const Vector& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

}  // namespace detail

/// Single-linkage merge of modes whose scaled coordinates all agree within
/// `tolerance`. Returns a group id per mode (not yet ordered).
inline std::vector<std::size_t> merge_modes(const std::vector<Vector>& modes, const Vector& scale, double tolerance) {
  const std::size_t n = modes.size();
  detail::DisjointSets sets(n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return modes[a][0] / scale[0] < modes[b][0] / scale[0];
  });
  for (std::size_t i = 0; i < n; ++i) {
    const Vector& a = modes[order[i]];
    for (std::size_t j = i + 1; j < n; ++j) {
      const Vector& b = modes[order[j]];
      if ((b[0] - a[0]) / scale[0] > tolerance) break;
      if (((a - b).cwiseAbs().cwiseQuotient(scale)).maxCoeff() <= tolerance) sets.unite(order[i], order[j]);
    }
  }
  std::vector<std::size_t> group(n);
  for (std::size_t i = 0; i < n; ++i) group[i] = sets.find(i);
  return group;
}

/// Modal clustering: decode each point, seek the mode from each distinct
/// start and label points by merged mode. Clusters are numbered by
/// decreasing size, ties broken by mode coordinates.
inline ClusteringResult cluster(const HmmVbModel& model, const Dataset& data, const ModeSearchConfig& config = {}) {
  if (!(config.tolerance > 0.0) || !(config.merge_tolerance > 0.0))
    throw ValidationError("mode_search", "tolerances must be > 0");
  CompiledModel cm(model);
  const Vector scale = config.scale.size() == data.dim() ? config.scale : data.column_scale();
  const std::size_t n = static_cast<std::size_t>(data.size());

  ClusteringResult result;
  result.sequences = decode_all(cm, data, config.threads);

  std::map<std::vector<int>, int> distinct;
  for (const auto& seq : result.sequences) distinct.emplace(seq, 0);
  int next_id = 0;
  for (auto& [seq, id] : distinct) id = next_id++;
  result.distinct_sequences = distinct.size();

  result.start_mode = config.start_mode;
  if (config.start_mode == StartMode::viterbi_means && config.switch_fraction &&
      static_cast<double>(distinct.size()) > *config.switch_fraction * static_cast<double>(n))
    result.start_mode = StartMode::data_points;

  std::vector<Vector> starts;
  result.mode_index.resize(n);
  if (result.start_mode == StartMode::viterbi_means) {
    starts.resize(distinct.size());
    for (const auto& [seq, id] : distinct) starts[id] = model.sequence_mean(seq);
    for (std::size_t i = 0; i < n; ++i) result.mode_index[i] = distinct.at(result.sequences[i]);
  } else {
    starts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      starts.push_back(data.point(static_cast<Eigen::Index>(i)));
      result.mode_index[i] = static_cast<int>(i);
    }
  }

  result.searches.resize(starts.size());
  parallel_for(starts.size(), config.threads,
               [&](std::size_t j) { result.searches[j] = find_mode(cm, starts[j], config, scale); });

  std::vector<Vector> modes;
  modes.reserve(result.searches.size());
  for (const auto& s : result.searches) modes.push_back(s.mode);
  const std::vector<std::size_t> group = merge_modes(modes, scale, config.merge_tolerance);

  // Representative per group: highest density, then smallest coordinates.
  std::map<std::size_t, std::size_t> representative;
  for (std::size_t j = 0; j < modes.size(); ++j) {
    auto [it, inserted] = representative.emplace(group[j], j);
    if (inserted) continue;
    const ModeResult& cur = result.searches[it->second];
    const ModeResult& cand = result.searches[j];
    if (cand.log_density > cur.log_density ||
        (cand.log_density == cur.log_density && detail::lexicographic_less(cand.mode, cur.mode)))
      it->second = j;
  }
  std::map<std::size_t, std::size_t> group_size;
  for (std::size_t i = 0; i < n; ++i) ++group_size[group[result.mode_index[i]]];

  std::vector<std::size_t> groups;
  for (const auto& [g, count] : group_size) groups.push_back(g);
  std::sort(groups.begin(), groups.end(), [&](std::size_t a, std::size_t b) {
    if (group_size[a] != group_size[b]) return group_size[a] > group_size[b];
    return detail::lexicographic_less(modes[representative[a]], modes[representative[b]]);
  });
  std::map<std::size_t, int> label_of;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    label_of[groups[c]] = static_cast<int>(c);
    result.cluster_modes.push_back(modes[representative[groups[c]]]);
    result.cluster_sizes.push_back(group_size[groups[c]]);
  }
  result.search_cluster.resize(modes.size(), -1);
  for (std::size_t j = 0; j < modes.size(); ++j) {
    auto it = label_of.find(group[j]);
    if (it != label_of.end()) result.search_cluster[j] = it->second;
  }
  result.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) result.labels[i] = result.search_cluster[result.mode_index[i]];
  return result;
}

}  // namespace hmmvb
