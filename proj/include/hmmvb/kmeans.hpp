#pragma once

#include <limits>
#include <random>
#include <vector>

#include "hmmvb/model.hpp"

namespace hmmvb {

struct KMeansResult {
  RowMatrix centers;
  std::vector<int> assignment;
  int iterations = 0;
  int reseeds = 0;
};

namespace detail {

inline double squared_distance(const RowMatrix& a, Eigen::Index i, const RowMatrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

/// Draws an index with probability proportional to mass[i].
template <typename Rng>
Eigen::Index draw_proportional(const Vector& mass, Rng& rng) {
  const double total = mass.sum();
  if (!(total > 0.0)) {
    std::uniform_int_distribution<Eigen::Index> pick(0, mass.size() - 1);
    return pick(rng);
  }
  std::uniform_real_distribution<double> u(0.0, total);
  double target = u(rng);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < mass.size(); ++i) {
    acc += mass[i];
    if (target < acc) return i;
  }
  for (Eigen::Index i = mass.size() - 1; i >= 0; --i)
    if (mass[i] > 0.0) return i;
  return mass.size() - 1;
}

}  // namespace detail

/// Nearest-center assignment; ties go to the lower center index.
inline std::vector<int> assign_to_centers(const RowMatrix& points, const RowMatrix& centers) {
  std::vector<int> out(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index c = 0; c < centers.rows(); ++c) {
      const double d = detail::squared_distance(points, i, centers, c);
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    out[i] = arg;
  }
  return out;
}

/// Weighted Lloyd iterations from the given centers. An empty cluster is
/// re-seeded at the point farthest from its current center; more than
/// `max_reseeds` re-seeds is an error.
inline KMeansResult lloyd(const RowMatrix& points, const Vector& weights, RowMatrix centers, int max_iterations = 100,
                          int max_reseeds = 10) {
  const Eigen::Index n = points.rows();
  const Eigen::Index k = centers.rows();
  KMeansResult r;
  r.assignment = assign_to_centers(points, centers);
  for (int it = 0; it < max_iterations; ++it) {
    RowMatrix sums = RowMatrix::Zero(k, points.cols());
    Vector mass = Vector::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(r.assignment[i]) += weights[i] * points.row(i);
      mass[r.assignment[i]] += weights[i];
    }
    bool reseeded = false;
    for (Eigen::Index c = 0; c < k; ++c) {
      if (mass[c] > 0.0) {
        centers.row(c) = sums.row(c) / mass[c];
        continue;
      }
      if (++r.reseeds > max_reseeds)
        throw NumericalError("k-means: cluster stayed empty after " + std::to_string(max_reseeds) + " re-seeds");
      double worst = -1.0;
      Eigen::Index arg = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = detail::squared_distance(points, i, centers, r.assignment[i]);
        if (d > worst) {
          worst = d;
          arg = i;
        }
      }
      centers.row(c) = points.row(arg);
      r.assignment[arg] = static_cast<int>(c);
      reseeded = true;
    }
    std::vector<int> next = assign_to_centers(points, centers);
    r.iterations = it + 1;
    const bool stable = next == r.assignment;
    r.assignment = std::move(next);
    if (stable && !reseeded) break;
  }
  r.centers = std::move(centers);
  return r;
}

/// k-means++ seeding followed by Lloyd iterations.
template <typename Rng>
KMeansResult kmeans(const RowMatrix& points, const Vector& weights, int k, Rng& rng, int max_iterations = 100) {
  const Eigen::Index n = points.rows();
  if (n < k) throw ValidationError("state_counts", "k-means needs at least " + std::to_string(k) + " points");
  RowMatrix centers(k, points.cols());
  centers.row(0) = points.row(detail::draw_proportional(weights, rng));
  Vector nearest(n);
  for (Eigen::Index i = 0; i < n; ++i) nearest[i] = detail::squared_distance(points, i, centers, 0);
  for (int c = 1; c < k; ++c) {
    const Vector mass = weights.cwiseProduct(nearest);
    centers.row(c) = points.row(detail::draw_proportional(mass, rng));
    for (Eigen::Index i = 0; i < n; ++i)
      nearest[i] = std::min(nearest[i], detail::squared_distance(points, i, centers, c));
  }
  return lloyd(points, weights, std::move(centers), max_iterations);
}

}  // namespace hmmvb
