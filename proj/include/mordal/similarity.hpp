#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mordal/error.hpp"

namespace mordal {

using Matrix = Eigen::MatrixXd;

// Per-model representation of the task samples: row = sample, column = feature.
// Two matrices compared against each other must list the same samples in the
// same row order.
struct ActivationMatrix {
  std::string model_id;
  Matrix values;

  std::size_t n_samples() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t n_features() const { return static_cast<std::size_t>(values.cols()); }
};

inline constexpr double kDegenerateHsic = 1e-12;

namespace detail {

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw Error(ErrorKind::kInput, std::string(what) + " contains non-finite entries");
  }
}

inline void require_square_pair(const Matrix& k, const Matrix& l) {
  if (k.rows() != k.cols() || l.rows() != l.cols()) {
    throw Error(ErrorKind::kDimension, "kernel matrices must be square");
  }
  if (k.rows() != l.rows()) {
    throw Error(ErrorKind::kDimension, "kernel size mismatch: " + std::to_string(k.rows()) +
                                           " vs " + std::to_string(l.rows()));
  }
  if (k.rows() < 2) throw Error(ErrorKind::kDimension, "kernel matrices need n >= 2");
}

inline void validate_pair(const ActivationMatrix& x, const ActivationMatrix& y) {
  if (x.n_samples() != y.n_samples()) {
    throw Error(ErrorKind::kDimension, "sample count mismatch: " + x.model_id + " has " +
                                           std::to_string(x.n_samples()) + ", " + y.model_id +
                                           " has " + std::to_string(y.n_samples()));
  }
  if (x.n_samples() < 2) throw Error(ErrorKind::kDimension, "activations need >= 2 samples");
  if (x.n_features() == 0 || y.n_features() == 0) {
    throw Error(ErrorKind::kDimension, "activations need >= 1 feature");
  }
  require_finite(x.values, x.model_id.c_str());
  require_finite(y.values, y.model_id.c_str());
}

// H * m * H with H = I - (1/n) 1 1^T.
inline Matrix double_center(const Matrix& m) {
  const Eigen::VectorXd row_mean = m.rowwise().mean();
  const Eigen::RowVectorXd col_mean = m.colwise().mean();
  const double grand = m.mean();
  Matrix out = m;
  out.colwise() -= row_mean;
  out.rowwise() -= col_mean;
  out.array() += grand;
  return out;
}

inline double clamp_unit(double v) { return std::clamp(v, 0.0, 1.0); }

// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace detail

inline Matrix linear_kernel(const Matrix& x) { return x * x.transpose(); }

// Biased HSIC estimate Tr(K H L H).
inline double hsic(const Matrix& k, const Matrix& l) {
  detail::require_square_pair(k, l);
  detail::require_finite(k, "K");
  detail::require_finite(l, "L");
  const Matrix kc = detail::double_center(k);
  const Matrix lc = detail::double_center(l);
  // Tr(HKH HLH) = sum_ij (HKH)_ij (HLH)_ji; H is idempotent.
  return kc.cwiseProduct(lc.transpose()).sum();
}

// Unbiased HSIC estimator (requires n >= 4), the per-batch quantity summed by
// minibatch CKA.
inline double hsic_unbiased(const Matrix& k, const Matrix& l) {
  detail::require_square_pair(k, l);
  const auto n = static_cast<double>(k.rows());
  if (k.rows() < 4) {
    throw Error(ErrorKind::kEstimator, "unbiased HSIC needs >= 4 samples per batch, got " +
                                           std::to_string(k.rows()));
  }
  Matrix kt = k;
  Matrix lt = l;
  kt.diagonal().setZero();
  lt.diagonal().setZero();
  const double trace_term = kt.cwiseProduct(lt.transpose()).sum();
  const Eigen::VectorXd kt_rows = kt.rowwise().sum();
  const Eigen::VectorXd lt_cols = lt.colwise().sum().transpose();
  const double sum_k = kt_rows.sum();
  const double sum_l = lt_cols.sum();
  // 1^T K~ L~ 1
  const double cross = kt.colwise().sum().dot(lt.rowwise().sum());
  return (trace_term + sum_k * sum_l / ((n - 1.0) * (n - 2.0)) - 2.0 / (n - 2.0) * cross) /
         (n * (n - 3.0));
}

// Linear-kernel CKA using the full-data (biased) HSIC, clamped to [0, 1].
inline double cka(const ActivationMatrix& x, const ActivationMatrix& y) {
  detail::validate_pair(x, y);
  const Matrix k = linear_kernel(x.values);
  const Matrix l = linear_kernel(y.values);
  const double kl = hsic(k, l);
  const double kk = hsic(k, k);
  const double ll = hsic(l, l);
  if (kk < kDegenerateHsic || ll < kDegenerateHsic) {
    throw Error(ErrorKind::kDegenerate,
                "constant activations (self-HSIC below 1e-12) for " +
                    (kk < kDegenerateHsic ? x.model_id : y.model_id));
  }
  return detail::clamp_unit(kl / std::sqrt(kk * ll));
}

// Minibatch CKA: unbiased HSIC estimates of (K,L), (K,K), (L,L) accumulated
// over paired batches in the given order, then combined once.
inline double minibatch_cka(std::span<const ActivationMatrix> batches_x,
                            std::span<const ActivationMatrix> batches_y) {
  if (batches_x.size() != batches_y.size()) {
    throw Error(ErrorKind::kDimension, "batch count mismatch: " +
                                           std::to_string(batches_x.size()) + " vs " +
                                           std::to_string(batches_y.size()));
  }
  if (batches_x.empty()) throw Error(ErrorKind::kDimension, "no batches given");
  detail::CompensatedSum kl, kk, ll;
  for (std::size_t b = 0; b < batches_x.size(); ++b) {
    const auto& bx = batches_x[b];
    const auto& by = batches_y[b];
    if (bx.n_samples() != by.n_samples()) {
      throw Error(ErrorKind::kDimension,
                  "batch " + std::to_string(b) + " pairs different sample counts");
    }
    if (bx.n_samples() < 4) {
      throw Error(ErrorKind::kEstimator,
                  "batch " + std::to_string(b) + " has fewer than 4 samples");
    }
    detail::validate_pair(bx, by);
    const Matrix k = linear_kernel(bx.values);
    const Matrix l = linear_kernel(by.values);
    kl.add(hsic_unbiased(k, l));
    kk.add(hsic_unbiased(k, k));
    ll.add(hsic_unbiased(l, l));
  }
  if (kk.value() < kDegenerateHsic || ll.value() < kDegenerateHsic) {
    throw Error(ErrorKind::kDegenerate, "constant activations in minibatch CKA");
  }
  return detail::clamp_unit(kl.value() / std::sqrt(kk.value() * ll.value()));
}

// Full-data CKA with the unbiased estimator; same code path as one-batch minibatch CKA.
inline double cka_unbiased(const ActivationMatrix& x, const ActivationMatrix& y) {
  return minibatch_cka(std::span<const ActivationMatrix>(&x, 1),
                       std::span<const ActivationMatrix>(&y, 1));
}

// Contiguous row batches of batch_size. A trailing remainder shorter than 4
// rows is folded into the preceding batch.
inline std::vector<ActivationMatrix> split_batches(const ActivationMatrix& x,
                                                   std::size_t batch_size) {
  if (batch_size < 4) throw Error(ErrorKind::kEstimator, "batch size must be >= 4");
  std::vector<ActivationMatrix> out;
  const std::size_t n = x.n_samples();
  std::size_t start = 0;
  while (start < n) {
    std::size_t len = std::min(batch_size, n - start);
    if (n - start - len > 0 && n - start - len < 4) len = n - start;
    out.push_back({x.model_id, x.values.middleRows(static_cast<Eigen::Index>(start),
                                                   static_cast<Eigen::Index>(len))});
    start += len;
  }
  return out;
}

struct SimilarityOptions {
  // 0 (or >= n_samples) means full-data CKA; otherwise minibatch CKA.
  std::size_t batch_size = 0;
};

inline double similarity(const ActivationMatrix& x, const ActivationMatrix& y,
                         const SimilarityOptions& opts = {}) {
  if (opts.batch_size == 0 || opts.batch_size >= x.n_samples()) return cka(x, y);
  detail::validate_pair(x, y);
  const auto bx = split_batches(x, opts.batch_size);
  const auto by = split_batches(y, opts.batch_size);
  return minibatch_cka(bx, by);
}

inline double distance(const ActivationMatrix& x, const ActivationMatrix& y,
                       const SimilarityOptions& opts = {}) {
  return 1.0 - similarity(x, y, opts);
}

}  // namespace mordal
