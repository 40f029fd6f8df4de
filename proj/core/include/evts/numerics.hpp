#pragma once

// Dense tensor substrate, seeded RNG, dilated convolution, Adam and the
// finite-difference gradient checker used to verify every backward pass.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace evts {

/// Invalid user-supplied configuration. The CLI maps it to exit code 1.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Tensor shapes that do not agree with an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major dense array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(double v);
  void add_(const Tensor& other, double scale = 1.0);
  Tensor reshaped(std::vector<std::size_t> shape) const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  double max_abs() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);
void require_finite(const Tensor& t, std::string_view what);

/// 64-bit seeded generator. Child streams are derived by name so that adding
/// a new consumer never shifts the draws of an existing one.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  Rng split(std::string_view stream) const;
  std::uint64_t seed() const { return seed_; }

  double uniform();
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  double beta(double a, double b);
  std::size_t index(std::size_t n);

  template <class RandomIt>
  void shuffle(RandomIt first, RandomIt last) {
    std::shuffle(first, last, engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// Single-sample dilated convolution with no implicit padding.
/// input [C_in x T], kernel [C_out x C_in x k] -> [C_out x (T - d(k-1))].
Tensor dilated_conv1d(const Tensor& input, const Tensor& kernel, std::size_t dilation,
                      std::string_view layer = "conv");

/// Batched channel-last layout used by the feature extractor:
/// x [N x T x C_in] -> columns [(N*T') x (k*C_in)], column block kappa holds
/// x[:, t + kappa*d, :].
Tensor im2col_dilated(const Tensor& x, std::size_t kernel_size, std::size_t dilation,
                      std::string_view layer = "conv");

/// y [N x T' x C_out] = cols * W + b, with W taken from kernel [C_out x C_in x k].
Tensor conv1d_from_cols(const Tensor& cols, std::size_t batch, std::size_t out_len,
                        const Tensor& kernel, const Tensor& bias);

Tensor conv1d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                      std::size_t dilation, std::string_view layer = "conv");

/// Accumulates dL/dx (if dx != nullptr), dL/dkernel and dL/dbias.
void conv1d_backward(const Tensor& cols, const std::vector<std::size_t>& x_shape,
                     const Tensor& kernel, const Tensor& dy, std::size_t dilation, Tensor* dx,
                     Tensor& dkernel, Tensor& dbias);

/// Row-major out [m x n] += alpha * a [m x k] * b [k x n]. Each output row is
/// accumulated in the same order wherever it sits, so permuting the rows of a
/// permutes the result bitwise.
void gemm_rows_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                   std::size_t n, double alpha = 1.0);

/// out [m x n] += a [m x k] * b [k x n] (with optional transposes).
void gemm_acc(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b, Tensor& out,
              double alpha = 1.0);
Tensor matmul(const Tensor& a, const Tensor& b);

struct Parameter {
  Tensor value;
  Tensor grad;

  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(Tensor::zeros_like(value)) {}
  void zero_grad() { grad.fill(0.0); }
};

struct NamedParameter {
  std::string name;
  Parameter* param;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::int64_t step = 0;

  static AdamState like(const Tensor& param) {
    return {Tensor::zeros_like(param), Tensor::zeros_like(param), 0};
  }
};

/// One bias-corrected Adam update. Throws std::runtime_error naming `group`
/// when the gradient is not finite.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamOptions& opts,
               std::string_view group = "param");

/// Adam over a fixed, ordered parameter list.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamOptions opts) : opts_(opts) {}
  void step(std::span<const NamedParameter> params);
  const AdamOptions& options() const { return opts_; }

 private:
  AdamOptions opts_;
  std::vector<AdamState> states_;
};

struct GradGroup {
  std::string name;
  Tensor* value;
  const Tensor* analytic;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double rel_tol = 1e-4;
  // Entries whose analytic and numeric values differ by less than this are
  // treated as agreeing regardless of relative error.
  double abs_floor = 1e-8;
  // Groups larger than this are checked on a random subsample of this size.
  std::size_t max_entries = 256;
  std::uint64_t seed = 0;
};

struct GroupReport {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GroupReport> groups;
  bool passed() const;
  std::string summary() const;
};

GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::span<const GradGroup> groups,
                                  const GradCheckOptions& opts = {});

}  // namespace evts
