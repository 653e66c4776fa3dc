#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "hmmvb/inference.hpp"

namespace hmmvb {

/// Flat Gaussian mixture with full covariances.
struct Gmm {
  Vector weights;
  std::vector<Vector> means;
  std::vector<Matrix> covariances;

  int size() const { return static_cast<int>(weights.size()); }
  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
};

/// Precomputed component densities of a Gmm.
class CompiledGmm {
 public:
  // Keeps a pointer to `gmm`; temporaries are rejected.
  explicit CompiledGmm(Gmm&&) = delete;
  explicit CompiledGmm(const Gmm& gmm) : gmm_(&gmm) {
    if (gmm.means.size() != static_cast<std::size_t>(gmm.size()) ||
        gmm.covariances.size() != static_cast<std::size_t>(gmm.size()))
      throw ValidationError("gmm", "weights, means and covariances differ in length");
    for (int k = 0; k < gmm.size(); ++k) components_.emplace_back(GaussianParams{gmm.means[k], gmm.covariances[k]}, 0, k);
    log_weights_ = gmm.weights.array().log();
  }

  const Gmm& gmm() const noexcept { return *gmm_; }
  const GaussianDensity& component(int k) const { return components_[k]; }

  /// log pi_k + log phi_k(x) for every k.
  Vector log_joint(const Vector& x) const {
    Vector out(gmm_->size());
    Vector scratch(x.size());
    for (int k = 0; k < gmm_->size(); ++k)
      out[k] = log_weights_[k] + components_[k].log_density(x.data(), scratch.data());
    return out;
  }

  double log_density(const Vector& x) const {
    Vector lj = log_joint(x);
    const double m = lj.maxCoeff();
    if (!std::isfinite(m)) return -std::numeric_limits<double>::infinity();
    return m + std::log((lj.array() - m).exp().sum());
  }

  /// Component posteriors p_k(x).
  Vector posterior(const Vector& x) const {
    Vector lj = log_joint(x);
    const double m = lj.maxCoeff();
    if (!std::isfinite(m)) throw NumericalError("point outside support: mixture density is zero");
    Vector p = (lj.array() - m).exp();
    return p / p.sum();
  }

 private:
  const Gmm* gmm_;
  std::vector<GaussianDensity> components_;
  Vector log_weights_;
};

/// One modal EM update: x' = (sum_k p_k P_k)^{-1} sum_k p_k P_k mu_k with
/// P_k the component precisions and p_k the posteriors at x.
inline Vector modal_em_step(const CompiledGmm& cg, const Vector& x) {
  const Vector p = cg.posterior(x);
  const int d = static_cast<int>(x.size());
  Matrix precision = Matrix::Zero(d, d);
  Vector rhs = Vector::Zero(d);
  for (int k = 0; k < cg.gmm().size(); ++k) {
    if (p[k] == 0.0) continue;
    precision.noalias() += p[k] * cg.component(k).precision();
    rhs.noalias() += p[k] * cg.component(k).precision_mean();
  }
  Eigen::LLT<Matrix> llt(precision);
  if (llt.info() != Eigen::Success) throw NumericalError("aggregated precision is not positive definite");
  return llt.solve(rhs);
}

inline Vector modal_em_step(const Gmm& gmm, const Vector& x) { return modal_em_step(CompiledGmm(gmm), x); }

}  // namespace hmmvb
