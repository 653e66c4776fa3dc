#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "hmmvb/gmm.hpp"
#include "hmmvb/modal.hpp"

namespace hmmvb {

/// Flat mixture equivalent to an HMM-VB: one component per state sequence,
/// with block-concatenated mean and block-diagonal covariance.
struct MappedGmm {
  std::vector<std::vector<int>> sequences;  // component index -> (s_1, ..., s_T)
  Gmm gmm;
};

inline constexpr double kDefaultMappedGuard = 1e5;

/// Enumerates every state sequence in lexicographic order. Desk-scale only:
/// refuses models with more than `guard` sequences.
inline MappedGmm enumerate_mapped_gmm(const HmmVbModel& model, double guard = kDefaultMappedGuard) {
  const BlockStructure& s = model.structure;
  const double count = s.sequence_count();
  if (count > guard) throw GuardError(count, guard);
  const int T = s.num_blocks();
  const int n = static_cast<int>(count);
  const int d = s.dim();

  MappedGmm out;
  out.sequences.reserve(n);
  out.gmm.weights.resize(n);
  std::vector<int> seq(T, 0);
  for (int c = 0; c < n; ++c) {
    double prior = model.initial_probs[seq[0]];
    for (int t = 0; t + 1 < T; ++t) prior *= model.transitions[t](seq[t], seq[t + 1]);
    Matrix cov = Matrix::Zero(d, d);
    for (int t = 0; t < T; ++t)
      cov.block(s.offset(t), s.offset(t), s.block_dim(t), s.block_dim(t)) = model.emissions[t][seq[t]].covariance;
    out.gmm.weights[c] = prior;
    out.gmm.means.push_back(model.sequence_mean(seq));
    out.gmm.covariances.push_back(std::move(cov));
    out.sequences.push_back(seq);
    for (int t = T - 1; t >= 0; --t) {
      if (++seq[t] < s.states(t)) break;
      seq[t] = 0;
    }
  }
  return out;
}

/// P(s | x) for every enumerated sequence.
inline Vector posterior_over_sequences(const MappedGmm& mapped, const Vector& x) {
  return CompiledGmm(mapped.gmm).posterior(x);
}

/// Largest deviations between the block recursions and the enumerated
/// mixture over a set of points.
struct OracleDeviations {
  double log_density = 0.0;
  double state_posterior = 0.0;
  double pair_posterior = 0.0;
  double viterbi_log_joint = 0.0;
  int viterbi_mismatches = 0;
  double mbw_step = 0.0;
  std::size_t components = 0;
  std::size_t points = 0;

  double max_deviation() const {
    return std::max({log_density, state_posterior, pair_posterior, viterbi_log_joint, mbw_step});
  }
};

/// Cross-checks forward-backward, Viterbi and one MBW step against the
/// mapped mixture at each point (block layout order).
inline OracleDeviations verify_against_mapped(const HmmVbModel& model, const std::vector<Vector>& points,
                                              double guard = kDefaultMappedGuard) {
  const MappedGmm mapped = enumerate_mapped_gmm(model, guard);
  const CompiledGmm cg(mapped.gmm);
  const CompiledModel cm(model);
  const BlockStructure& s = model.structure;
  const int T = s.num_blocks();
  OracleDeviations dev;
  dev.components = mapped.sequences.size();
  dev.points = points.size();
  for (const Vector& x : points) {
    const PointPosterior pp = forward_backward(cm, x);
    dev.log_density = std::max(dev.log_density, std::abs(pp.log_evidence - cg.log_density(x)));

    const Vector post = cg.posterior(x);
    std::vector<Vector> marg(T);
    std::vector<Matrix> pair(T > 1 ? T - 1 : 0);
    for (int t = 0; t < T; ++t) marg[t] = Vector::Zero(s.states(t));
    for (int t = 0; t + 1 < T; ++t) pair[t] = Matrix::Zero(s.states(t), s.states(t + 1));
    for (std::size_t c = 0; c < mapped.sequences.size(); ++c) {
      const auto& seq = mapped.sequences[c];
      for (int t = 0; t < T; ++t) marg[t][seq[t]] += post[c];
      for (int t = 0; t + 1 < T; ++t) pair[t](seq[t], seq[t + 1]) += post[c];
    }
    for (int t = 0; t < T; ++t)
      dev.state_posterior = std::max(dev.state_posterior, (pp.state[t] - marg[t]).cwiseAbs().maxCoeff());
    for (int t = 0; t + 1 < T; ++t)
      dev.pair_posterior = std::max(dev.pair_posterior, (pp.pair[t] - pair[t]).cwiseAbs().maxCoeff());

    const Vector joint = cg.log_joint(x);
    Eigen::Index best = 0;
    joint.maxCoeff(&best);
    const ViterbiPath vp = viterbi(cm, x);
    dev.viterbi_log_joint = std::max(dev.viterbi_log_joint, std::abs(vp.log_joint - joint[best]));
    if (vp.states != mapped.sequences[best]) ++dev.viterbi_mismatches;

    dev.mbw_step = std::max(dev.mbw_step, (mbw_step(cm, x) - modal_em_step(cg, x)).cwiseAbs().maxCoeff());
  }
  return dev;
}

}  // namespace hmmvb
