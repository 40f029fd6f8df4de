#include "evts/numerics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

namespace evts {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Kernel [C_out x C_in x k] as the [(k*C_in) x C_out] matrix matching im2col.
RowMat kernel_as_matrix(const Tensor& kernel) {
  const std::size_t c_out = kernel.dim(0), c_in = kernel.dim(1), k = kernel.dim(2);
  RowMat w(k * c_in, c_out);
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t c = 0; c < c_in; ++c)
      for (std::size_t kk = 0; kk < k; ++kk) w(kk * c_in + c, o) = kernel.at(o, c, kk);
  return w;
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape_));
  return shape_[axis];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other, double scale) {
  if (other.shape_ != shape_)
    throw ShapeError("add_: " + shape_string(shape_) + " vs " + shape_string(other.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += " x ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void require_finite(const Tensor& t, std::string_view what) {
  if (!t.all_finite()) throw std::runtime_error("non-finite values in " + std::string(what));
}

// ---------------------------------------------------------------- Rng

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

Rng Rng::split(std::string_view stream) const {
  return Rng(splitmix64(seed_ ^ splitmix64(fnv1a(stream))));
}

double Rng::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

double Rng::uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

double Rng::normal(double mean, double stddev) {
  if (stddev == 0.0) return mean;
  return std::normal_distribution<double>(mean, stddev)(engine_);
}

double Rng::beta(double a, double b) {
  const double x = std::gamma_distribution<double>(a, 1.0)(engine_);
  const double y = std::gamma_distribution<double>(b, 1.0)(engine_);
  if (x + y == 0.0) return 0.5;
  return x / (x + y);
}

std::size_t Rng::index(std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

// ---------------------------------------------------------------- convolution

Tensor dilated_conv1d(const Tensor& input, const Tensor& kernel, std::size_t dilation,
                      std::string_view layer) {
  if (input.rank() != 2 || kernel.rank() != 3)
    throw ShapeError(std::string(layer) + ": expected input [C_in x T] and kernel "
                     "[C_out x C_in x k]");
  if (dilation < 1) throw ShapeError(std::string(layer) + ": dilation must be >= 1");
  const std::size_t c_in = input.dim(0), t_in = input.dim(1);
  const std::size_t c_out = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != c_in)
    throw ShapeError(std::string(layer) + ": kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels, got " + std::to_string(c_in));
  const std::size_t span = dilation * (k - 1);
  if (t_in <= span)
    throw ShapeError(std::string(layer) + ": input length " + std::to_string(t_in) +
                     " too short for dilation " + std::to_string(dilation) + " and kernel " +
                     std::to_string(k));
  const std::size_t t_out = t_in - span;
  Tensor out({c_out, t_out});
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t t = 0; t < t_out; ++t) {
      double acc = 0.0;
      for (std::size_t c = 0; c < c_in; ++c)
        for (std::size_t kk = 0; kk < k; ++kk)
          acc += kernel.at(o, c, kk) * input.at(c, t + kk * dilation);
      out.at(o, t) = acc;
    }
  return out;
}

Tensor im2col_dilated(const Tensor& x, std::size_t kernel_size, std::size_t dilation,
                      std::string_view layer) {
  if (x.rank() != 3) throw ShapeError(std::string(layer) + ": expected [N x T x C] input");
  const std::size_t n = x.dim(0), t_in = x.dim(1), c = x.dim(2);
  const std::size_t span = dilation * (kernel_size - 1);
  if (t_in <= span)
    throw ShapeError(std::string(layer) + ": temporal length " + std::to_string(t_in) +
                     " too short for dilation " + std::to_string(dilation) + " and kernel " +
                     std::to_string(kernel_size));
  const std::size_t t_out = t_in - span;
  const std::size_t width = kernel_size * c;
  Tensor cols({n * t_out, width});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < t_out; ++t) {
      double* dst = cols.data() + (i * t_out + t) * width;
      for (std::size_t kk = 0; kk < kernel_size; ++kk) {
        const double* src = x.data() + (i * t_in + t + kk * dilation) * c;
        std::copy(src, src + c, dst + kk * c);
      }
    }
  return cols;
}

Tensor conv1d_from_cols(const Tensor& cols, std::size_t batch, std::size_t out_len,
                        const Tensor& kernel, const Tensor& bias) {
  const std::size_t c_out = kernel.dim(0);
  if (cols.dim(1) != kernel.dim(1) * kernel.dim(2))
    throw ShapeError("conv1d: kernel " + shape_string(kernel.shape()) +
                     " does not match column width " + std::to_string(cols.dim(1)));
  const RowMat w = kernel_as_matrix(kernel);
  Tensor y({batch, out_len, c_out});
  gemm_rows_acc(cols.data(), w.data(), y.data(), cols.dim(0), cols.dim(1), c_out);
  MatMap ym(y.data(), static_cast<Eigen::Index>(batch * out_len), c_out);
  if (!bias.empty()) {
    Eigen::Map<const Eigen::RowVectorXd> bv(bias.data(), c_out);
    ym.rowwise() += bv;
  }
  return y;
}

Tensor conv1d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                      std::size_t dilation, std::string_view layer) {
  if (x.rank() != 3 || kernel.rank() != 3 || kernel.dim(1) != x.dim(2))
    throw ShapeError(std::string(layer) + ": input " + shape_string(x.shape()) +
                     " incompatible with kernel " + shape_string(kernel.shape()));
  const Tensor cols = im2col_dilated(x, kernel.dim(2), dilation, layer);
  const std::size_t t_out = x.dim(1) - dilation * (kernel.dim(2) - 1);
  return conv1d_from_cols(cols, x.dim(0), t_out, kernel, bias);
}

void conv1d_backward(const Tensor& cols, const std::vector<std::size_t>& x_shape,
                     const Tensor& kernel, const Tensor& dy, std::size_t dilation, Tensor* dx,
                     Tensor& dkernel, Tensor& dbias) {
  const std::size_t n = x_shape[0], t_in = x_shape[1], c_in = x_shape[2];
  const std::size_t c_out = kernel.dim(0), k = kernel.dim(2);
  const std::size_t t_out = t_in - dilation * (k - 1);
  const std::size_t rows = n * t_out, width = k * c_in;

  ConstMatMap dym(dy.data(), rows, c_out);
  ConstMatMap cm(cols.data(), rows, width);
  const RowMat dw = cm.transpose() * dym;
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t c = 0; c < c_in; ++c)
      for (std::size_t kk = 0; kk < k; ++kk) dkernel.at(o, c, kk) += dw(kk * c_in + c, o);
  if (!dbias.empty()) {
    const Eigen::RowVectorXd db = dym.colwise().sum();
    for (std::size_t o = 0; o < c_out; ++o) dbias[o] += db(o);
  }
  if (dx != nullptr) {
    const RowMat w = kernel_as_matrix(kernel);
    const RowMat dcols = dym * w.transpose();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < t_out; ++t) {
        const double* src = dcols.data() + (i * t_out + t) * width;
        for (std::size_t kk = 0; kk < k; ++kk) {
          double* dst = dx->data() + (i * t_in + t + kk * dilation) * c_in;
          for (std::size_t c = 0; c < c_in; ++c) dst[c] += src[kk * c_in + c];
        }
      }
  }
}

void gemm_rows_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                   std::size_t n, double alpha) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += aip * brow[j];
    }
    double* orow = out + i * n;
    for (std::size_t j = 0; j < n; ++j) orow[j] += alpha * acc[j];
  }
}

void gemm_acc(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b, Tensor& out,
              double alpha) {
  ConstMatMap am(a.data(), a.dim(0), a.dim(1));
  ConstMatMap bm(b.data(), b.dim(0), b.dim(1));
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t ka = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t nn = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb || out.size() != m * nn)
    throw ShapeError("gemm: " + shape_string(a.shape()) + (trans_a ? "^T" : "") + " * " +
                     shape_string(b.shape()) + (trans_b ? "^T" : "") + " -> " +
                     shape_string(out.shape()));
  if (!trans_a && !trans_b) {
    gemm_rows_acc(a.data(), b.data(), out.data(), m, ka, nn, alpha);
    return;
  }
  MatMap om(out.data(), m, nn);
  if (trans_a && !trans_b)
    om.noalias() += alpha * am.transpose() * bm;
  else if (!trans_a && trans_b)
    om.noalias() += alpha * am * bm.transpose();
  else
    om.noalias() += alpha * am.transpose() * bm.transpose();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out({a.dim(0), b.dim(1)});
  gemm_acc(a, false, b, false, out);
  return out;
}

// ---------------------------------------------------------------- Adam

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamOptions& opts,
               std::string_view group) {
  if (!param.same_shape(grad) || !param.same_shape(state.m) || !param.same_shape(state.v))
    throw ShapeError("adam_step(" + std::string(group) + "): shape mismatch " +
                     shape_string(param.shape()) + " vs grad " + shape_string(grad.shape()));
  if (!grad.all_finite())
    throw std::runtime_error("adam_step: non-finite gradient in parameter group '" +
                             std::string(group) + "'");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state.m[i] = opts.beta1 * state.m[i] + (1.0 - opts.beta1) * g;
    state.v[i] = opts.beta2 * state.v[i] + (1.0 - opts.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    param[i] -= opts.lr * m_hat / (std::sqrt(v_hat) + opts.eps);
  }
}

void AdamOptimizer::step(std::span<const NamedParameter> params) {
  if (states_.empty()) {
    states_.reserve(params.size());
    for (const auto& p : params) states_.push_back(AdamState::like(p.param->value));
  }
  if (states_.size() != params.size())
    throw std::logic_error("AdamOptimizer: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i)
    adam_step(params[i].param->value, params[i].param->grad, states_[i], opts_, params[i].name);
}

// ---------------------------------------------------------------- gradient check

bool GradCheckReport::passed() const {
  return std::all_of(groups.begin(), groups.end(), [](const GroupReport& g) { return g.passed; });
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  for (const auto& g : groups) {
    os << (g.passed ? "ok   " : "FAIL ") << g.name << " checked=" << g.checked
       << " max_rel=" << g.max_rel_error;
    if (!g.passed)
      os << " at[" << g.worst_index << "] analytic=" << g.worst_analytic
         << " numeric=" << g.worst_numeric;
    os << '\n';
  }
  return os.str();
}

GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::span<const GradGroup> groups,
                                  const GradCheckOptions& opts) {
  GradCheckReport report;
  Rng rng(opts.seed);
  for (const auto& group : groups) {
    if (!group.value->same_shape(*group.analytic))
      throw ShapeError("finite_diff_check: analytic gradient shape mismatch for " + group.name);
    std::vector<std::size_t> idx(group.value->size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > opts.max_entries) {
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(opts.max_entries);
      std::sort(idx.begin(), idx.end());
    }
    GroupReport gr;
    gr.name = group.name;
    for (std::size_t i : idx) {
      double& p = (*group.value)[i];
      const double saved = p;
      p = saved + opts.eps;
      const double up = loss();
      p = saved - opts.eps;
      const double down = loss();
      p = saved;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double analytic = (*group.analytic)[i];
      const double diff = std::abs(numeric - analytic);
      double rel = 0.0;
      if (diff > opts.abs_floor) rel = diff / std::max(std::abs(numeric), std::abs(analytic));
      ++gr.checked;
      if (gr.checked == 1 || rel > gr.max_rel_error) {
        gr.max_rel_error = rel;
        gr.worst_index = i;
        gr.worst_analytic = analytic;
        gr.worst_numeric = numeric;
      }
    }
    gr.passed = gr.max_rel_error < opts.rel_tol;
    report.groups.push_back(std::move(gr));
  }
  return report;
}

}  // namespace evts
