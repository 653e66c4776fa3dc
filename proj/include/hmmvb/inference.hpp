#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "hmmvb/model.hpp"
#include "hmmvb/parallel.hpp"

namespace hmmvb {

/// Gaussian with a cached Cholesky factor and precision.
class GaussianDensity {
 public:
  GaussianDensity() = default;

  GaussianDensity(const GaussianParams& g, int block = -1, int state = -1)
      : mean_(g.mean), dim_(static_cast<int>(g.mean.size())) {
    Eigen::LLT<Matrix> llt(g.covariance);
    if (llt.info() != Eigen::Success)
      throw NumericalError("covariance of block " + std::to_string(block) + " state " + std::to_string(state) +
                               " is not positive definite",
                           block, state);
    chol_ = llt.matrixL();
    double log_det = 0.0;
    for (int i = 0; i < dim_; ++i) log_det += 2.0 * std::log(chol_(i, i));
    log_norm_ = -0.5 * (dim_ * std::log(2.0 * std::numbers::pi) + log_det);
    precision_ = llt.solve(Matrix::Identity(dim_, dim_));
    precision_ = 0.5 * (precision_ + precision_.transpose()).eval();
    precision_mean_ = precision_ * mean_;
    if (!std::isfinite(log_norm_) || !precision_.allFinite())
      throw NumericalError("degenerate covariance in block " + std::to_string(block) + " state " +
                               std::to_string(state),
                           block, state);
  }

  int dim() const noexcept { return dim_; }
  const Vector& mean() const noexcept { return mean_; }
  const Matrix& precision() const noexcept { return precision_; }
  const Vector& precision_mean() const noexcept { return precision_mean_; }

  /// log phi(x | mean, cov); `scratch` must hold dim() doubles.
  double log_density(const double* x, double* scratch) const {
    if (dim_ == 1) {
      const double z = (x[0] - mean_[0]) / chol_(0, 0);
      return log_norm_ - 0.5 * z * z;
    }
    double quad = 0.0;
    for (int i = 0; i < dim_; ++i) {
      double v = x[i] - mean_[i];
      for (int j = 0; j < i; ++j) v -= chol_(i, j) * scratch[j];
      v /= chol_(i, i);
      scratch[i] = v;
      quad += v * v;
    }
    return log_norm_ - 0.5 * quad;
  }

  double log_density(const Vector& x) const {
    Vector scratch(dim_);
    return log_density(x.data(), scratch.data());
  }

 private:
  Vector mean_;
  Matrix chol_;
  Matrix precision_;
  Vector precision_mean_;
  double log_norm_ = 0.0;
  int dim_ = 0;
};

/// Read-only model view with cached log-probabilities and Cholesky factors.
/// Safe to share across threads.
class CompiledModel {
 public:
  // Keeps a pointer to `model`; temporaries are rejected.
  explicit CompiledModel(HmmVbModel&&) = delete;
  explicit CompiledModel(const HmmVbModel& model) : model_(&model) {
    const BlockStructure& s = model.structure;
    const int T = s.num_blocks();
    log_initial_ = model.initial_probs.array().log();
    for (const Matrix& a : model.transitions) log_transitions_.push_back(a.array().log().matrix());
    densities_.resize(T);
    for (int t = 0; t < T; ++t)
      for (int k = 0; k < s.states(t); ++k) densities_[t].emplace_back(model.emissions[t][k], t, k);
  }

  const HmmVbModel& model() const noexcept { return *model_; }
  const BlockStructure& structure() const noexcept { return model_->structure; }
  const GaussianDensity& density(int t, int k) const { return densities_[t][k]; }
  const Vector& log_initial() const noexcept { return log_initial_; }
  const Matrix& log_transition(int t) const { return log_transitions_[t]; }

 private:
  const HmmVbModel* model_;
  Vector log_initial_;
  std::vector<Matrix> log_transitions_;
  std::vector<std::vector<GaussianDensity>> densities_;
};

/// Scaled forward-backward state for one point.
///
/// After run(): alpha[t] is the normalized forward vector, beta[t] the
/// backward vector rescaled by the same constants, so alpha[t] .* beta[t] is
/// the state posterior. emission[t] holds densities divided by
/// exp(emission_shift[t]); log P(x) = sum_t log(scale[t]) + emission_shift[t].
struct ForwardBackward {
  std::vector<Vector> emission;
  std::vector<double> emission_shift;
  std::vector<Vector> alpha;
  std::vector<Vector> beta;
  std::vector<double> scale;
  Vector scratch;
  Vector weighted_beta;
  double log_evidence = 0.0;

  void resize(const BlockStructure& s) {
    const int T = s.num_blocks();
    std::vector<int> shape(s.state_counts().begin(), s.state_counts().end());
    shape.insert(shape.end(), s.block_dims().begin(), s.block_dims().end());
    if (shape == shape_) return;
    shape_ = std::move(shape);
    emission.resize(T);
    alpha.resize(T);
    beta.resize(T);
    emission_shift.assign(T, 0.0);
    scale.assign(T, 0.0);
    int maxd = 0;
    for (int t = 0; t < T; ++t) {
      emission[t].resize(s.states(t));
      alpha[t].resize(s.states(t));
      beta[t].resize(s.states(t));
      maxd = std::max(maxd, s.block_dim(t));
    }
    scratch.resize(maxd);
    weighted_beta.resize(s.max_states());
  }

  void compute_emissions(const CompiledModel& cm, const double* x) {
    const BlockStructure& s = cm.structure();
    for (int t = 0; t < s.num_blocks(); ++t) {
      const double* xt = x + s.offset(t);
      Vector& e = emission[t];
      double shift = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < s.states(t); ++k) {
        const double v = cm.density(t, k).log_density(xt, scratch.data());
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
          throw NumericalError("non-finite emission density in block " + std::to_string(t) + " state " +
                                   std::to_string(k),
                               t, k);
        e[k] = v;
        shift = std::max(shift, v);
      }
      if (!std::isfinite(shift))
        throw NumericalError("emission densities underflow in block " + std::to_string(t), t, -1);
      emission_shift[t] = shift;
      for (int k = 0; k < s.states(t); ++k) e[k] = std::exp(e[k] - shift);
    }
  }

  void forward(const CompiledModel& cm) {
    const HmmVbModel& m = cm.model();
    const int T = m.structure.num_blocks();
    alpha[0] = m.initial_probs.cwiseProduct(emission[0]);
    normalize_alpha(0);
    for (int t = 1; t < T; ++t) {
      alpha[t].noalias() = m.transitions[t - 1].transpose() * alpha[t - 1];
      alpha[t].array() *= emission[t].array();
      normalize_alpha(t);
    }
    log_evidence = 0.0;
    for (int t = 0; t < T; ++t) log_evidence += std::log(scale[t]) + emission_shift[t];
  }

  void backward(const CompiledModel& cm) {
    const HmmVbModel& m = cm.model();
    const int T = m.structure.num_blocks();
    beta[T - 1].setOnes();
    for (int t = T - 2; t >= 0; --t) {
      const Eigen::Index next = beta[t + 1].size();
      weighted_beta.head(next) = emission[t + 1].cwiseProduct(beta[t + 1]) / scale[t + 1];
      beta[t].noalias() = m.transitions[t] * weighted_beta.head(next);
    }
  }

  void run(const CompiledModel& cm, const double* x) {
    resize(cm.structure());
    compute_emissions(cm, x);
    forward(cm);
    backward(cm);
  }

  /// L_k(x, t) for all k.
  Vector state_posterior(int t) const { return alpha[t].cwiseProduct(beta[t]); }

  /// H_{k,l}(x, t) for k in S_t, l in S_{t+1}.
  Matrix pair_posterior(const CompiledModel& cm, int t) const {
    Vector right = emission[t + 1].cwiseProduct(beta[t + 1]) / scale[t + 1];
    return (alpha[t] * right.transpose()).cwiseProduct(cm.model().transitions[t]);
  }

 private:
  void normalize_alpha(int t) {
    const double c = alpha[t].sum();
    if (!(c > 0.0) || !std::isfinite(c))
      throw NumericalError("point has zero probability under the model at block " + std::to_string(t), t, -1);
    scale[t] = c;
    alpha[t] /= c;
  }

  std::vector<int> shape_;
};

/// One row of the posterior tables: L[t][k], H[t](k, l) and log P(x).
struct PointPosterior {
  std::vector<Vector> state;
  std::vector<Matrix> pair;
  double log_evidence = 0.0;
};

using PosteriorTables = std::vector<PointPosterior>;

inline PointPosterior forward_backward(const CompiledModel& cm, const Eigen::Ref<const Vector>& x) {
  if (x.size() != cm.structure().dim())
    throw ValidationError("point", "dimension " + std::to_string(x.size()) + " does not match model dimension " +
                                       std::to_string(cm.structure().dim()));
  ForwardBackward fb;
  fb.run(cm, x.data());
  PointPosterior out;
  const int T = cm.structure().num_blocks();
  for (int t = 0; t < T; ++t) out.state.push_back(fb.state_posterior(t));
  for (int t = 0; t + 1 < T; ++t) out.pair.push_back(fb.pair_posterior(cm, t));
  out.log_evidence = fb.log_evidence;
  return out;
}

inline PointPosterior forward_backward(const HmmVbModel& model, const Eigen::Ref<const Vector>& x) {
  return forward_backward(CompiledModel(model), x);
}

inline PosteriorTables posterior_tables(const HmmVbModel& model, const Dataset& data) {
  CompiledModel cm(model);
  PosteriorTables out;
  out.reserve(data.size());
  for (Eigen::Index i = 0; i < data.size(); ++i) out.push_back(forward_backward(cm, data.point(i)));
  return out;
}

/// log P(x) for a point in block layout.
inline double log_density(const CompiledModel& cm, const Eigen::Ref<const Vector>& x) {
  ForwardBackward fb;
  fb.resize(cm.structure());
  fb.compute_emissions(cm, x.data());
  fb.forward(cm);
  return fb.log_evidence;
}

inline double log_density(const HmmVbModel& model, const Eigen::Ref<const Vector>& x) {
  return log_density(CompiledModel(model), x);
}

/// Weighted log-likelihood sum_i w_i log P(x_i).
inline double log_likelihood(const CompiledModel& cm, const Dataset& data) {
  if (!data.structure().same_layout(cm.structure()) || data.dim() != cm.structure().dim())
    throw ValidationError("dataset", "block layout does not match the model");
  ForwardBackward fb;
  fb.resize(cm.structure());
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    try {
      fb.compute_emissions(cm, data.layout().row(i).data());
      fb.forward(cm);
    } catch (const NumericalError& e) {
      throw NumericalError("point " + std::to_string(i) + ": " + e.what(), e.block(), e.state());
    }
    total += data.weights()[i] * fb.log_evidence;
  }
  return total;
}

inline double log_likelihood(const HmmVbModel& model, const Dataset& data) {
  return log_likelihood(CompiledModel(model), data);
}

struct ViterbiPath {
  std::vector<int> states;
  double log_joint = 0.0;  // log P(x, s*)
};

/// Most probable state sequence, computed with additive log scores. Ties go
/// to the lowest state index at each backtracking step.
inline ViterbiPath viterbi(const CompiledModel& cm, const Eigen::Ref<const Vector>& x) {
  const BlockStructure& s = cm.structure();
  const int T = s.num_blocks();
  if (x.size() != s.dim()) throw ValidationError("point", "dimension does not match model");
  Vector scratch(std::max(1, s.dim()));
  auto log_emission = [&](int t, int k) {
    const double v = cm.density(t, k).log_density(x.data() + s.offset(t), scratch.data());
    if (std::isnan(v))
      throw NumericalError("non-finite emission density in block " + std::to_string(t) + " state " +
                               std::to_string(k),
                           t, k);
    return v;
  };
  std::vector<std::vector<int>> back(T);
  Vector score(s.states(0));
  for (int k = 0; k < s.states(0); ++k) score[k] = cm.log_initial()[k] + log_emission(0, k);
  for (int t = 1; t < T; ++t) {
    const Matrix& la = cm.log_transition(t - 1);
    Vector next(s.states(t));
    back[t].resize(s.states(t));
    for (int l = 0; l < s.states(t); ++l) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int k = 0; k < s.states(t - 1); ++k) {
        const double v = score[k] + la(k, l);
        if (v > best) {
          best = v;
          arg = k;
        }
      }
      back[t][l] = arg;
      next[l] = best + log_emission(t, l);
    }
    score = std::move(next);
  }
  ViterbiPath path;
  path.states.assign(T, 0);
  double best = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < s.states(T - 1); ++k)
    if (score[k] > best) {
      best = score[k];
      path.states[T - 1] = k;
    }
  for (int t = T - 1; t > 0; --t) path.states[t - 1] = back[t][path.states[t]];
  path.log_joint = best;
  return path;
}

inline ViterbiPath viterbi(const HmmVbModel& model, const Eigen::Ref<const Vector>& x) {
  return viterbi(CompiledModel(model), x);
}

/// Viterbi paths of every point in the dataset.
inline std::vector<std::vector<int>> decode_all(const CompiledModel& cm, const Dataset& data, int threads = 1) {
  std::vector<std::vector<int>> out(data.size());
  parallel_for(static_cast<std::size_t>(data.size()), threads,
               [&](std::size_t i) { out[i] = viterbi(cm, data.point(static_cast<Eigen::Index>(i))).states; });
  return out;
}

}  // namespace hmmvb
