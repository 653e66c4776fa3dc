#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hmmvb/error.hpp"

namespace hmmvb {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Partition of d variables into an ordered chain of T blocks.
///
/// `column_permutation[c]` is the position of raw data column c in the
/// concatenated block layout; block t occupies layout positions
/// [offset(t), offset(t) + block_dim(t)).
class BlockStructure {
 public:
  BlockStructure() = default;

  BlockStructure(std::vector<int> block_dims, std::vector<int> state_counts,
                 std::vector<int> column_permutation = {})
      : block_dims_(std::move(block_dims)),
        state_counts_(std::move(state_counts)),
        permutation_(std::move(column_permutation)) {
    if (block_dims_.empty()) throw ValidationError("block_dims", "at least one block is required");
    if (block_dims_.size() != state_counts_.size())
      throw ValidationError("state_counts", "expected " + std::to_string(block_dims_.size()) +
                                                " entries, got " + std::to_string(state_counts_.size()));
    offsets_.resize(block_dims_.size());
    int offset = 0;
    for (std::size_t t = 0; t < block_dims_.size(); ++t) {
      if (block_dims_[t] < 1)
        throw ValidationError("block_dims[" + std::to_string(t) + "]", "must be >= 1");
      if (state_counts_[t] < 1)
        throw ValidationError("state_counts[" + std::to_string(t) + "]", "must be >= 1");
      offsets_[t] = offset;
      offset += block_dims_[t];
    }
    dim_ = offset;
    if (permutation_.empty()) {
      permutation_.resize(dim_);
      std::iota(permutation_.begin(), permutation_.end(), 0);
    }
    if (static_cast<int>(permutation_.size()) != dim_)
      throw ValidationError("column_permutation", "length " + std::to_string(permutation_.size()) +
                                                      " does not match dimension " + std::to_string(dim_));
    inverse_.assign(dim_, -1);
    for (int c = 0; c < dim_; ++c) {
      int p = permutation_[c];
      if (p < 0 || p >= dim_ || inverse_[p] != -1)
        throw ValidationError("column_permutation", "not a bijection on 0.." + std::to_string(dim_ - 1));
      inverse_[p] = c;
    }
  }

  /// Builds a structure from the raw columns listed in chain order, e.g.
  /// {9, 8, ..., 0} puts raw column 9 first.
  static BlockStructure from_layout_order(std::vector<int> block_dims, std::vector<int> state_counts,
                                          const std::vector<int>& raw_columns_in_layout_order) {
    std::vector<int> perm(raw_columns_in_layout_order.size(), -1);
    for (std::size_t p = 0; p < raw_columns_in_layout_order.size(); ++p) {
      int c = raw_columns_in_layout_order[p];
      if (c < 0 || c >= static_cast<int>(perm.size()) || perm[c] != -1)
        throw ValidationError("columns", "layout order is not a permutation");
      perm[c] = static_cast<int>(p);
    }
    return BlockStructure(std::move(block_dims), std::move(state_counts), std::move(perm));
  }

  /// T blocks of one variable each, all with `states` states.
  static BlockStructure singletons(int d, int states) {
    return BlockStructure(std::vector<int>(d, 1), std::vector<int>(d, states));
  }

  int num_blocks() const noexcept { return static_cast<int>(block_dims_.size()); }
  int dim() const noexcept { return dim_; }
  int block_dim(int t) const { return block_dims_[t]; }
  int offset(int t) const { return offsets_[t]; }
  int states(int t) const { return state_counts_[t]; }
  int max_states() const { return *std::max_element(state_counts_.begin(), state_counts_.end()); }

  std::span<const int> block_dims() const noexcept { return block_dims_; }
  std::span<const int> state_counts() const noexcept { return state_counts_; }
  std::span<const int> column_permutation() const noexcept { return permutation_; }

  int layout_position(int raw_column) const { return permutation_[raw_column]; }
  int raw_column(int layout_position) const { return inverse_[layout_position]; }

  /// Product of state counts, saturating at `cap`.
  double sequence_count(double cap = 1e300) const {
    double total = 1.0;
    for (int m : state_counts_) {
      total *= m;
      if (total > cap) return cap;
    }
    return total;
  }

  BlockStructure with_state_counts(std::vector<int> counts) const {
    return BlockStructure(block_dims_, std::move(counts), permutation_);
  }

  /// Maps a vector in raw column order to block layout order.
  Vector to_layout(const Vector& raw) const {
    Vector out(dim_);
    for (int c = 0; c < dim_; ++c) out[permutation_[c]] = raw[c];
    return out;
  }

  Vector to_raw(const Vector& layout) const {
    Vector out(dim_);
    for (int c = 0; c < dim_; ++c) out[c] = layout[permutation_[c]];
    return out;
  }

  bool same_layout(const BlockStructure& other) const {
    return block_dims_ == other.block_dims_ && permutation_ == other.permutation_;
  }

  friend bool operator==(const BlockStructure& a, const BlockStructure& b) {
    return a.block_dims_ == b.block_dims_ && a.state_counts_ == b.state_counts_ &&
           a.permutation_ == b.permutation_;
  }

 private:
  std::vector<int> block_dims_;
  std::vector<int> state_counts_;
  std::vector<int> permutation_;
  std::vector<int> inverse_;
  std::vector<int> offsets_;
  int dim_ = 0;
};

struct GaussianParams {
  Vector mean;
  Matrix covariance;
};

/// Per-column affine preprocessing, stored in raw column order:
/// standardized = (raw - center) / scale.
struct Standardization {
  Vector center;
  Vector scale;

  Vector apply(const Vector& raw) const { return (raw - center).cwiseQuotient(scale); }
  Vector invert(const Vector& standardized) const {
    return standardized.cwiseProduct(scale) + center;
  }
};

/// Hidden Markov model on variable blocks.
struct HmmVbModel {
  BlockStructure structure;
  Vector initial_probs;                           // length M_1
  std::vector<Matrix> transitions;                // T-1 matrices, M_t x M_{t+1}
  std::vector<std::vector<GaussianParams>> emissions;  // [t][k]
  std::optional<Standardization> standardization;

  /// Throws ValidationError naming the first violated invariant.
  void validate(double stochastic_tolerance = 1e-10) const {
    const int T = structure.num_blocks();
    auto check_distribution = [&](const auto& row, const std::string& field) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < row.size(); ++j) {
        double v = row[j];
        if (!std::isfinite(v) || v < 0.0) throw ValidationError(field, "entries must be finite and >= 0");
        sum += v;
      }
      if (std::abs(sum - 1.0) > stochastic_tolerance)
        throw ValidationError(field, "sums to " + std::to_string(sum) + ", expected 1");
    };
    if (initial_probs.size() != structure.states(0))
      throw ValidationError("initial_probs", "length must equal M_1 = " + std::to_string(structure.states(0)));
    check_distribution(initial_probs, "initial_probs");
    if (static_cast<int>(transitions.size()) != T - 1)
      throw ValidationError("transitions", "expected " + std::to_string(T - 1) + " matrices");
    for (int t = 0; t + 1 < T; ++t) {
      const std::string field = "transitions[" + std::to_string(t) + "]";
      const Matrix& a = transitions[t];
      if (a.rows() != structure.states(t) || a.cols() != structure.states(t + 1))
        throw ValidationError(field, "shape must be " + std::to_string(structure.states(t)) + "x" +
                                         std::to_string(structure.states(t + 1)));
      for (Eigen::Index k = 0; k < a.rows(); ++k)
        check_distribution(a.row(k), field + ".row[" + std::to_string(k) + "]");
    }
    if (static_cast<int>(emissions.size()) != T)
      throw ValidationError("emissions", "expected " + std::to_string(T) + " blocks");
    for (int t = 0; t < T; ++t) {
      if (static_cast<int>(emissions[t].size()) != structure.states(t))
        throw ValidationError("emissions[" + std::to_string(t) + "]",
                              "expected M_t = " + std::to_string(structure.states(t)) + " states");
      const int dt = structure.block_dim(t);
      for (int k = 0; k < structure.states(t); ++k) {
        const std::string field = "emissions[" + std::to_string(t) + "][" + std::to_string(k) + "]";
        const GaussianParams& g = emissions[t][k];
        if (g.mean.size() != dt) throw ValidationError(field + ".mean", "dimension must be " + std::to_string(dt));
        if (g.covariance.rows() != dt || g.covariance.cols() != dt)
          throw ValidationError(field + ".covariance", "shape must be " + std::to_string(dt) + "x" + std::to_string(dt));
        if (!g.mean.allFinite() || !g.covariance.allFinite())
          throw ValidationError(field, "non-finite parameters");
        const double norm = g.covariance.cwiseAbs().maxCoeff();
        if ((g.covariance - g.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(norm, 1.0))
          throw ValidationError(field + ".covariance", "not symmetric");
        Eigen::LLT<Matrix> llt(g.covariance);
        if (llt.info() != Eigen::Success)
          throw ValidationError(field + ".covariance", "not positive definite");
      }
    }
    if (standardization) {
      if (standardization->center.size() != structure.dim() || standardization->scale.size() != structure.dim())
        throw ValidationError("standardization", "dimension mismatch");
      if ((standardization->scale.array() <= 0.0).any())
        throw ValidationError("standardization.scale", "entries must be > 0");
    }
  }

  /// Concatenated means of a state sequence, in layout order.
  Vector sequence_mean(std::span<const int> states) const {
    Vector out(structure.dim());
    for (int t = 0; t < structure.num_blocks(); ++t)
      out.segment(structure.offset(t), structure.block_dim(t)) = emissions[t][states[t]].mean;
    return out;
  }
};

/// Free parameters of a full-covariance HMM-VB: initial probabilities,
/// transition rows and per-state Gaussian mean plus covariance.
inline std::int64_t num_free_parameters(const BlockStructure& s) {
  std::int64_t count = s.states(0) - 1;
  for (int t = 0; t + 1 < s.num_blocks(); ++t)
    count += static_cast<std::int64_t>(s.states(t)) * (s.states(t + 1) - 1);
  for (int t = 0; t < s.num_blocks(); ++t) {
    const std::int64_t d = s.block_dim(t);
    count += s.states(t) * (d + d * (d + 1) / 2);
  }
  return count;
}

inline std::int64_t num_free_parameters(const HmmVbModel& model) {
  return num_free_parameters(model.structure);
}

/// n weighted points stored in block layout order.
class Dataset {
 public:
  Dataset() = default;

  /// `raw` holds one point per row in raw column order.
  Dataset(const RowMatrix& raw, const BlockStructure& structure, Vector weights = Vector())
      : structure_(structure) {
    if (raw.rows() < 1) throw ValidationError("points", "dataset must contain at least one point");
    if (raw.cols() != structure.dim())
      throw ValidationError("points", "has " + std::to_string(raw.cols()) + " columns, structure expects " +
                                          std::to_string(structure.dim()));
    if (!raw.allFinite()) throw ValidationError("points", "contains non-finite values");
    if (weights.size() == 0) weights = Vector::Ones(raw.rows());
    if (weights.size() != raw.rows())
      throw ValidationError("weights", "length must equal number of points");
    if (!weights.allFinite() || (weights.array() <= 0.0).any())
      throw ValidationError("weights", "all weights must be finite and > 0");
    weights_ = std::move(weights);
    layout_.resize(raw.rows(), raw.cols());
    for (int c = 0; c < structure.dim(); ++c) layout_.col(structure.layout_position(c)) = raw.col(c);
  }

  Eigen::Index size() const noexcept { return layout_.rows(); }
  int dim() const noexcept { return static_cast<int>(layout_.cols()); }
  const BlockStructure& structure() const noexcept { return structure_; }
  const Vector& weights() const noexcept { return weights_; }
  double total_weight() const { return weights_.sum(); }
  const RowMatrix& layout() const noexcept { return layout_; }

  Vector point(Eigen::Index i) const { return layout_.row(i).transpose(); }

  auto block(Eigen::Index i, int t) const {
    return layout_.row(i).segment(structure_.offset(t), structure_.block_dim(t));
  }

  /// Rebuilds the points in raw column order.
  RowMatrix raw() const {
    RowMatrix out(layout_.rows(), layout_.cols());
    for (int c = 0; c < dim(); ++c) out.col(c) = layout_.col(structure_.layout_position(c));
    return out;
  }

  /// Same points viewed through a structure with the same block layout but
  /// possibly different state counts.
  Dataset with_structure(const BlockStructure& s) const {
    if (!s.same_layout(structure_)) return Dataset(raw(), s, weights_);
    Dataset out = *this;
    out.structure_ = s;
    return out;
  }

  /// Per-column weighted standard deviation in layout order; zero columns map to 1.
  Vector column_scale() const {
    const double w = total_weight();
    Vector mean = (weights_.transpose() * layout_).transpose() / w;
    Vector var = Vector::Zero(dim());
    for (Eigen::Index i = 0; i < size(); ++i)
      var += weights_[i] * (layout_.row(i).transpose() - mean).array().square().matrix();
    var /= w;
    Vector sd = var.cwiseSqrt();
    for (Eigen::Index j = 0; j < sd.size(); ++j)
      if (!(sd[j] > 0.0)) sd[j] = 1.0;
    return sd;
  }

 private:
  BlockStructure structure_;
  Vector weights_;
  RowMatrix layout_;
};

/// Column means and standard deviations of `raw` (population form).
inline Standardization fit_standardization(const RowMatrix& raw) {
  Standardization s;
  s.center = raw.colwise().mean().transpose();
  s.scale.resize(raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    double var = (raw.col(j).array() - s.center[j]).square().mean();
    s.scale[j] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

inline RowMatrix apply_standardization(const Standardization& s, const RowMatrix& raw) {
  RowMatrix out = raw;
  for (Eigen::Index j = 0; j < raw.cols(); ++j)
    out.col(j) = (raw.col(j).array() - s.center[j]) / s.scale[j];
  return out;
}

}  // namespace hmmvb
