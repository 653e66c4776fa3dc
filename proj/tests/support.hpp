#pragma once

// Independent oracles and random-instance builders shared by the unit and
// acceptance suites. Nothing here calls the library's inference code.

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "hmmvb/hmmvb.hpp"

namespace hmmvb::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline Matrix random_spd(Rng& rng, int d, double min_eig = 0.3, double max_eig = 2.0) {
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = z(rng);
  Eigen::HouseholderQR<Matrix> qr(a);
  const Matrix q = qr.householderQ();
  Vector eig(d);
  for (int i = 0; i < d; ++i) eig[i] = uniform(rng, min_eig, max_eig);
  Matrix s = q * eig.asDiagonal() * q.transpose();
  return 0.5 * (s + s.transpose());
}

inline Vector random_simplex(Rng& rng, int m, double floor = 0.05) {
  Vector p(m);
  for (int i = 0; i < m; ++i) p[i] = uniform(rng, floor, 1.0);
  return p / p.sum();
}

inline HmmVbModel random_model(Rng& rng, const std::vector<int>& dims, const std::vector<int>& states,
                               double mean_spread = 2.0) {
  HmmVbModel m;
  m.structure = BlockStructure(dims, states);
  const int T = static_cast<int>(dims.size());
  m.initial_probs = random_simplex(rng, states[0]);
  for (int t = 0; t + 1 < T; ++t) {
    Matrix a(states[t], states[t + 1]);
    for (int k = 0; k < states[t]; ++k) a.row(k) = random_simplex(rng, states[t + 1]).transpose();
    m.transitions.push_back(a);
  }
  std::normal_distribution<double> z(0.0, mean_spread);
  m.emissions.resize(T);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < states[t]; ++k) {
      Vector mu(dims[t]);
      for (int j = 0; j < dims[t]; ++j) mu[j] = z(rng);
      m.emissions[t].push_back({mu, random_spd(rng, dims[t])});
    }
  return m;
}

/// Random small instance: T in [t_lo, t_hi], M_t in [m_lo, m_hi], d_t in [d_lo, d_hi].
inline HmmVbModel random_small_model(Rng& rng, int t_lo, int t_hi, int m_lo, int m_hi, int d_lo, int d_hi) {
  const int T = uniform_int(rng, t_lo, t_hi);
  std::vector<int> dims(T), states(T);
  for (int t = 0; t < T; ++t) {
    dims[t] = uniform_int(rng, d_lo, d_hi);
    states[t] = uniform_int(rng, m_lo, m_hi);
  }
  return random_model(rng, dims, states);
}

/// Draws points (layout order) from the model by ancestral sampling.
inline RowMatrix sample_model(Rng& rng, const HmmVbModel& m, Eigen::Index n, std::vector<std::vector<int>>* paths = nullptr) {
  const BlockStructure& s = m.structure;
  RowMatrix out(n, s.dim());
  std::normal_distribution<double> z(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<int> seq(s.num_blocks());
    std::discrete_distribution<int> first(m.initial_probs.data(), m.initial_probs.data() + m.initial_probs.size());
    seq[0] = first(rng);
    for (int t = 1; t < s.num_blocks(); ++t) {
      const Vector row = m.transitions[t - 1].row(seq[t - 1]).transpose();
      std::discrete_distribution<int> next(row.data(), row.data() + row.size());
      seq[t] = next(rng);
    }
    for (int t = 0; t < s.num_blocks(); ++t) {
      const GaussianParams& g = m.emissions[t][seq[t]];
      const Matrix l = g.covariance.llt().matrixL();
      Vector e(s.block_dim(t));
      for (int j = 0; j < e.size(); ++j) e[j] = z(rng);
      out.row(i).segment(s.offset(t), s.block_dim(t)) = (g.mean + l * e).transpose();
    }
    if (paths) paths->push_back(seq);
  }
  return out;
}

/// Every state sequence, last block varying fastest.
inline std::vector<std::vector<int>> all_sequences(std::span<const int> states) {
  std::vector<std::vector<int>> out{{}};
  for (int m : states) {
    std::vector<std::vector<int>> grown;
    for (const auto& prefix : out)
      for (int k = 0; k < m; ++k) {
        auto s = prefix;
        s.push_back(k);
        grown.push_back(std::move(s));
      }
    out = std::move(grown);
  }
  return out;
}

/// Gaussian log density through an LU determinant and explicit inverse.
inline double gaussian_log_pdf(const Vector& x, const Vector& mean, const Matrix& cov) {
  Eigen::FullPivLU<Matrix> lu(cov);
  const Vector diff = x - mean;
  const double quad = diff.dot(lu.inverse() * diff);
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + std::log(lu.determinant()) + quad);
}

inline double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double a : v) m = std::max(m, a);
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

/// log P(x, s) by the direct product formula; x in layout order.
inline double brute_log_joint(const HmmVbModel& m, const Vector& x, const std::vector<int>& seq) {
  const BlockStructure& s = m.structure;
  double v = std::log(m.initial_probs[seq[0]]);
  for (int t = 0; t + 1 < s.num_blocks(); ++t) v += std::log(m.transitions[t](seq[t], seq[t + 1]));
  for (int t = 0; t < s.num_blocks(); ++t) {
    const GaussianParams& g = m.emissions[t][seq[t]];
    v += gaussian_log_pdf(x.segment(s.offset(t), s.block_dim(t)), g.mean, g.covariance);
  }
  return v;
}

struct BruteForce {
  std::vector<std::vector<int>> sequences;
  std::vector<double> log_joint;
  double log_density = 0.0;
  std::vector<Vector> state;
  std::vector<Matrix> pair;
  std::size_t argmax = 0;
};

inline BruteForce brute_force(const HmmVbModel& m, const Vector& x) {
  const BlockStructure& s = m.structure;
  BruteForce b;
  b.sequences = all_sequences(s.state_counts());
  for (const auto& seq : b.sequences) b.log_joint.push_back(brute_log_joint(m, x, seq));
  b.log_density = log_sum_exp(b.log_joint);
  for (int t = 0; t < s.num_blocks(); ++t) b.state.push_back(Vector::Zero(s.states(t)));
  for (int t = 0; t + 1 < s.num_blocks(); ++t) b.pair.push_back(Matrix::Zero(s.states(t), s.states(t + 1)));
  for (std::size_t c = 0; c < b.sequences.size(); ++c) {
    const double p = std::exp(b.log_joint[c] - b.log_density);
    const auto& seq = b.sequences[c];
    for (int t = 0; t < s.num_blocks(); ++t) b.state[t][seq[t]] += p;
    for (int t = 0; t + 1 < s.num_blocks(); ++t) b.pair[t](seq[t], seq[t + 1]) += p;
    if (b.log_joint[c] > b.log_joint[b.argmax]) b.argmax = c;
  }
  return b;
}

/// Plain full-covariance GMM written out as textbook EM, independent of the
/// HMM-VB code paths.
struct PlainGmm {
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<Matrix> covariances;
};

inline PlainGmm plain_gmm_from_model(const HmmVbModel& m) {
  PlainGmm g;
  for (int k = 0; k < m.structure.states(0); ++k) {
    g.weights.push_back(m.initial_probs[k]);
    g.means.push_back(m.emissions[0][k].mean);
    g.covariances.push_back(m.emissions[0][k].covariance);
  }
  return g;
}

inline double plain_gmm_log_likelihood(const PlainGmm& g, const RowMatrix& x, const Vector& w) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::vector<double> lj;
    for (std::size_t k = 0; k < g.weights.size(); ++k)
      lj.push_back(std::log(g.weights[k]) + gaussian_log_pdf(x.row(i).transpose(), g.means[k], g.covariances[k]));
    total += w[i] * log_sum_exp(lj);
  }
  return total;
}

/// One EM iteration with `ridge` added to every covariance diagonal.
inline PlainGmm plain_gmm_em_step(const PlainGmm& g, const RowMatrix& x, const Vector& w, double ridge) {
  const std::size_t K = g.weights.size();
  const Eigen::Index n = x.rows();
  const int d = static_cast<int>(x.cols());
  Matrix resp(n, K);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> lj;
    for (std::size_t k = 0; k < K; ++k)
      lj.push_back(std::log(g.weights[k]) + gaussian_log_pdf(x.row(i).transpose(), g.means[k], g.covariances[k]));
    const double lse = log_sum_exp(lj);
    for (std::size_t k = 0; k < K; ++k) resp(i, k) = std::exp(lj[k] - lse);
  }
  PlainGmm out;
  const double W = w.sum();
  for (std::size_t k = 0; k < K; ++k) {
    double nk = 0.0;
    Vector mu = Vector::Zero(d);
    for (Eigen::Index i = 0; i < n; ++i) {
      nk += w[i] * resp(i, k);
      mu += w[i] * resp(i, k) * x.row(i).transpose();
    }
    mu /= nk;
    Matrix cov = Matrix::Zero(d, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector diff = x.row(i).transpose() - mu;
      cov += w[i] * resp(i, k) * diff * diff.transpose();
    }
    cov /= nk;
    cov.diagonal().array() += ridge;
    out.weights.push_back(nk / W);
    out.means.push_back(mu);
    out.covariances.push_back(cov);
  }
  return out;
}

/// Ridge from the training module's documented rule, recomputed here:
/// factor times the mean per-column weighted population variance.
inline double reference_ridge(const RowMatrix& x, const Vector& w, double factor) {
  const double W = w.sum();
  double total = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mean = w.dot(x.col(j)) / W;
    double var = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) var += w[i] * (x(i, j) - mean) * (x(i, j) - mean);
    var /= W;
    total += var > 0.0 ? var : 1.0;
  }
  return factor * total / static_cast<double>(x.cols());
}

/// Central-difference gradient of log f, each coordinate scaled by `scale`
/// (so the result is d log f / d(x_j / scale_j)).
inline Vector scaled_log_density_gradient(const HmmVbModel& m, const Vector& x, const Vector& scale,
                                          double rel_step = 1e-5) {
  const CompiledModel cm(m);
  Vector g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = rel_step * scale[j];
    Vector a = x, b = x;
    a[j] += h;
    b[j] -= h;
    g[j] = (log_density(cm, a) - log_density(cm, b)) / (2.0 * h) * scale[j];
  }
  return g;
}

}  // namespace hmmvb::testing
