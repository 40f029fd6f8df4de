#include "evts/stfe.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <utility>

#include "evts/dynamic_graph.hpp"

namespace evts {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;

MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Parameter uniform_param(std::vector<std::size_t> shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return Parameter(std::move(t));
}

// y_b = L_b x_b for every subgraph, x viewed as [rows x width] per subgraph.
void apply_laplacian(const ForwardCache& c, const Tensor& x, std::size_t width, Tensor& y,
                     double scale, bool accumulate) {
  for (std::size_t b = 0; b + 1 < c.offsets.size(); ++b) {
    const std::size_t o = c.offsets[b], n = c.offsets[b + 1] - o;
    if (n == 0) continue;
    const Tensor& L = c.laplacians[c.block_of[b]];
    ConstMatMap lm = as_matrix(L, n, n);
    ConstMatMap xm(x.data() + o * width, static_cast<Eigen::Index>(n),
                   static_cast<Eigen::Index>(width));
    MatMap ym(y.data() + o * width, static_cast<Eigen::Index>(n),
              static_cast<Eigen::Index>(width));
    if (accumulate)
      ym.noalias() += scale * lm * xm;
    else
      ym.noalias() = scale * lm * xm;
  }
}

}  // namespace

// ---------------------------------------------------------------- config

std::vector<std::size_t> StfeConfig::dilations() const {
  std::vector<std::size_t> d;
  for (std::size_t m = 0; m < blocks; ++m) {
    std::size_t rate = 1;
    for (std::size_t l = 0; l < layers; ++l) {
      d.push_back(rate);
      rate *= dilation_rate;
    }
  }
  return d;
}

std::size_t StfeConfig::receptive_field() const {
  std::size_t r = 1;
  for (std::size_t d : dilations()) r += d * (kernel_size - 1);
  return r;
}

std::size_t StfeConfig::padding() const {
  const std::size_t r = receptive_field();
  return r > history ? r - history : 0;
}

std::vector<std::size_t> StfeConfig::temporal_lengths() const {
  std::vector<std::size_t> len{history + padding()};
  for (std::size_t d : dilations()) {
    const std::size_t span = d * (kernel_size - 1);
    len.push_back(len.back() > span ? len.back() - span : 0);
  }
  return len;
}

void StfeConfig::validate() const {
  auto need = [](bool ok, const char* key, const char* why) {
    if (!ok) throw ConfigError(std::string(key) + ": " + why);
  };
  need(channels >= 1, "channels", "must be >= 1");
  need(blocks >= 1, "blocks", "must be >= 1");
  need(layers >= 1, "layers", "must be >= 1");
  need(kernel_size >= 1, "kernel_size", "must be >= 1");
  need(dilation_rate >= 1, "dilation_rate", "must be >= 1");
  need(cheb_order >= 1, "cheb_order", "must be >= 1");
  need(head_channels >= 1, "head_channels", "must be >= 1");
  need(history >= 1, "history", "must be >= 1");
  need(horizon >= 1, "horizon", "must be >= 1");
  need(bn_momentum > 0.0 && bn_momentum <= 1.0, "bn_momentum", "must be in (0, 1]");
  need(bn_eps > 0.0, "bn_eps", "must be > 0");
  const auto len = temporal_lengths();
  for (std::size_t i = 1; i < len.size(); ++i)
    if (len[i] < 1)
      throw ConfigError("stfe: temporal length underflow at block " +
                        std::to_string((i - 1) / layers + 1) + " layer " +
                        std::to_string((i - 1) % layers + 1));
}

std::string StfeParams::layer_prefix(std::size_t layer_index) const {
  const std::size_t m = layer_index / cfg.layers + 1, l = layer_index % cfg.layers + 1;
  return "stfe.block" + std::to_string(m) + ".layer" + std::to_string(l) + ".";
}

StfeParams StfeParams::init(const StfeConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t C = cfg.channels, k = cfg.kernel_size;
  StfeParams p;
  p.cfg = cfg;
  p.embed_weight = uniform_param({C}, 1.0, rng);
  p.embed_bias = uniform_param({C}, 1.0, rng);
  const double conv_bound = 1.0 / std::sqrt(static_cast<double>(C * k));
  const double lin_bound = 1.0 / std::sqrt(static_cast<double>(C));
  for (std::size_t i = 0; i < cfg.num_layers(); ++i) {
    LayerParams lp;
    lp.filter = uniform_param({C, C, k}, conv_bound, rng);
    lp.filter_bias = uniform_param({C}, conv_bound, rng);
    lp.gate = uniform_param({C, C, k}, conv_bound, rng);
    lp.gate_bias = uniform_param({C}, conv_bound, rng);
    lp.bn_gamma = Parameter(Tensor({C}, 1.0));
    lp.bn_beta = Parameter(Tensor({C}, 0.0));
    lp.skip_weight = uniform_param({C, C}, lin_bound, rng);
    lp.skip_bias = uniform_param({C}, lin_bound, rng);
    for (std::size_t j = 0; j < cfg.cheb_order; ++j)
      lp.cheb.push_back(uniform_param({C, C}, lin_bound, rng));
    lp.running_mean = Tensor({C}, 0.0);
    lp.running_var = Tensor({C}, 1.0);
    p.layers.push_back(std::move(lp));
  }
  p.head1_weight = uniform_param({C, cfg.head_channels}, lin_bound, rng);
  p.head1_bias = uniform_param({cfg.head_channels}, lin_bound, rng);
  const double head_bound = 1.0 / std::sqrt(static_cast<double>(cfg.head_channels));
  p.head2_weight = uniform_param({cfg.head_channels, cfg.horizon}, head_bound, rng);
  p.head2_bias = uniform_param({cfg.horizon}, head_bound, rng);
  return p;
}

// ---------------------------------------------------------------- forward

Tensor chebyshev_conv(const Tensor& laplacian, const Tensor& x, std::span<const Tensor> thetas) {
  const std::size_t n = x.dim(0);
  if (laplacian.dim(0) != n || laplacian.dim(1) != n)
    throw ShapeError("chebyshev_conv: Laplacian does not match feature rows");
  if (thetas.empty()) throw ShapeError("chebyshev_conv: need at least one Theta");
  Tensor out({n, thetas[0].dim(1)});
  Tensor prev2 = x, prev1;
  gemm_acc(prev2, false, thetas[0], false, out);
  if (thetas.size() >= 2) {
    prev1 = matmul(laplacian, x);
    gemm_acc(prev1, false, thetas[1], false, out);
  }
  for (std::size_t j = 2; j < thetas.size(); ++j) {
    Tensor cur = matmul(laplacian, prev1);
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = 2.0 * cur[i] - prev2[i];
    gemm_acc(cur, false, thetas[j], false, out);
    prev2 = std::move(prev1);
    prev1 = std::move(cur);
  }
  return out;
}

Tensor output_head(const Tensor& features, const StfeParams& params, Tensor* hidden) {
  const std::size_t N = features.dim(0);
  if (features.dim(1) != params.head1_weight.value.dim(0))
    throw ShapeError("output_head: features " + shape_string(features.shape()) +
                     " do not match head weights " + shape_string(params.head1_weight.value.shape()));
  const std::size_t Ch = params.head1_weight.value.dim(1);
  const std::size_t Q = params.head2_weight.value.dim(1);
  Tensor pre({N, Ch});
  {
    MatMap pm = as_matrix(pre, N, Ch);
    gemm_rows_acc(features.data(), params.head1_weight.value.data(), pre.data(), N,
                  features.dim(1), Ch);
    pm.rowwise() += ConstVecMap(params.head1_bias.value.data(), Ch);
  }
  Tensor act = pre;
  for (auto& v : act.values()) v = v > 0.0 ? v : 0.0;
  Tensor out({N, Q});
  MatMap om = as_matrix(out, N, Q);
  gemm_rows_acc(act.data(), params.head2_weight.value.data(), out.data(), N, Ch, Q);
  om.rowwise() += ConstVecMap(params.head2_bias.value.data(), Q);
  if (hidden) *hidden = std::move(pre);
  return out;
}

StfeOutput stfe_forward(const FlatBatch& flat, const HolisticGraph& graph, StfeParams& params,
                        Mode mode, ForwardCache* cache) {
  return stfe_forward(flat.rows, graph, params, mode, cache);
}

StfeOutput stfe_forward(const Tensor& rows, const HolisticGraph& graph, StfeParams& params,
                        Mode mode, ForwardCache* cache) {
  const StfeConfig& cfg = params.cfg;
  const std::size_t N = rows.dim(0), C = cfg.channels, J = cfg.cheb_order;
  if (rows.rank() != 2 || rows.dim(1) != cfg.history)
    throw ShapeError("stfe_forward: expected rows [B' x " + std::to_string(cfg.history) +
                     "], got " + shape_string(rows.shape()));
  if (graph.num_rows() != N)
    throw ShapeError("stfe_forward: graph covers " + std::to_string(graph.num_rows()) +
                     " rows, batch has " + std::to_string(N));
  if (!rows.all_finite()) throw std::invalid_argument("stfe_forward: non-finite input rows");

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c = ForwardCache{};
  c.mode = mode;
  c.batch = N;
  c.offsets = graph.offsets;
  c.block_of = graph.block_of;
  c.weights = graph.blocks;
  c.laplacians.reserve(graph.blocks.size());
  for (const auto& w : graph.blocks) c.laplacians.push_back(normalized_laplacian(w));

  const std::size_t pad = cfg.padding();
  const std::size_t R = cfg.history + pad;
  c.padded = Tensor({N, R});
  for (std::size_t i = 0; i < N; ++i)
    std::copy_n(rows.data() + i * cfg.history, cfg.history, c.padded.data() + i * R + pad);

  Tensor h({N, R, C});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t t = 0; t < R; ++t) {
      const double x = c.padded.at(i, t);
      double* dst = h.data() + (i * R + t) * C;
      for (std::size_t ch = 0; ch < C; ++ch)
        dst[ch] = x * params.embed_weight.value[ch] + params.embed_bias.value[ch];
    }

  Tensor skip({N, C});
  const auto dil = cfg.dilations();
  const bool keep = cache != nullptr;
  if (keep) c.layers.resize(dil.size());

  for (std::size_t li = 0; li < dil.size(); ++li) {
    LayerParams& lp = params.layers[li];
    const std::size_t d = dil[li];
    const std::size_t t_in = h.dim(1);
    const std::string name = "block " + std::to_string(li / cfg.layers + 1) + " layer " +
                             std::to_string(li % cfg.layers + 1);
    Tensor cols = im2col_dilated(h, cfg.kernel_size, d, name);
    const std::size_t t_out = t_in - d * (cfg.kernel_size - 1);
    const std::size_t M = N * t_out;

    Tensor tf = conv1d_from_cols(cols, N, t_out, lp.filter.value, lp.filter_bias.value);
    Tensor sg = conv1d_from_cols(cols, N, t_out, lp.gate.value, lp.gate_bias.value);
    Tensor u({N, t_out, C});
    for (std::size_t i = 0; i < u.size(); ++i) {
      tf[i] = std::tanh(tf[i]);
      sg[i] = sigmoid(sg[i]);
      u[i] = tf[i] * sg[i];
    }

    // Residual over the trailing t_out steps, then batch norm per channel.
    Tensor res({N, t_out, C});
    const std::size_t shift = t_in - t_out;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t t = 0; t < t_out; ++t) {
        const double* hi = h.data() + (i * t_in + t + shift) * C;
        const double* ui = u.data() + (i * t_out + t) * C;
        double* ri = res.data() + (i * t_out + t) * C;
        for (std::size_t ch = 0; ch < C; ++ch) ri[ch] = hi[ch] + ui[ch];
      }
    Tensor mean({C}), inv_std({C});
    if (mode == Mode::Training) {
      ConstMatMap rm = as_matrix(std::as_const(res), M, C);
      const Eigen::RowVectorXd mu = rm.colwise().mean();
      const Eigen::RowVectorXd var =
          (rm.rowwise() - mu).array().square().matrix().colwise().sum() / static_cast<double>(M);
      for (std::size_t ch = 0; ch < C; ++ch) {
        mean[ch] = mu(ch);
        inv_std[ch] = 1.0 / std::sqrt(var(ch) + cfg.bn_eps);
        const double unbiased = M > 1 ? var(ch) * static_cast<double>(M) / (M - 1.0) : var(ch);
        lp.running_mean[ch] =
            (1.0 - cfg.bn_momentum) * lp.running_mean[ch] + cfg.bn_momentum * mu(ch);
        lp.running_var[ch] =
            (1.0 - cfg.bn_momentum) * lp.running_var[ch] + cfg.bn_momentum * unbiased;
      }
    } else {
      for (std::size_t ch = 0; ch < C; ++ch) {
        mean[ch] = lp.running_mean[ch];
        inv_std[ch] = 1.0 / std::sqrt(lp.running_var[ch] + cfg.bn_eps);
      }
    }
    Tensor xhat({N, t_out, C}), bn({N, t_out, C});
    for (std::size_t r = 0; r < M; ++r)
      for (std::size_t ch = 0; ch < C; ++ch) {
        const double xh = (res[r * C + ch] - mean[ch]) * inv_std[ch];
        xhat[r * C + ch] = xh;
        bn[r * C + ch] = lp.bn_gamma.value[ch] * xh + lp.bn_beta.value[ch];
      }

    // Skip accumulator: affine map of the running sum plus U at the last step.
    Tensor skip_next({N, C});
    {
      MatMap sn = as_matrix(skip_next, N, C);
      gemm_rows_acc(skip.data(), lp.skip_weight.value.data(), skip_next.data(), N, C, C);
      sn.rowwise() += ConstVecMap(lp.skip_bias.value.data(), C);
      for (std::size_t i = 0; i < N; ++i) {
        const double* ui = u.data() + (i * t_out + t_out - 1) * C;
        for (std::size_t ch = 0; ch < C; ++ch) skip_next.at(i, ch) += ui[ch];
      }
    }

    // Chebyshev graph convolution applied at every remaining time step.
    const std::size_t width = t_out * C;
    std::vector<Tensor> terms;
    terms.reserve(J);
    terms.push_back(bn);
    if (J >= 2) {
      Tensor t2({N, t_out, C});
      apply_laplacian(c, terms[0], width, t2, 1.0, false);
      terms.push_back(std::move(t2));
    }
    for (std::size_t j = 2; j < J; ++j) {
      Tensor tj = terms[j - 2];
      for (auto& v : tj.values()) v = -v;
      apply_laplacian(c, terms[j - 1], width, tj, 2.0, true);
      terms.push_back(std::move(tj));
    }
    Tensor h_next({N, t_out, C});
    {
      for (std::size_t j = 0; j < J; ++j)
        gemm_rows_acc(terms[j].data(), lp.cheb[j].value.data(), h_next.data(), M, C, C);
    }

    if (keep) {
      LayerCache& lc = c.layers[li];
      lc.t_in = t_in;
      lc.t_out = t_out;
      lc.input = std::move(h);
      lc.cols = std::move(cols);
      lc.tanh_f = std::move(tf);
      lc.sigma_g = std::move(sg);
      lc.xhat = std::move(xhat);
      lc.inv_std = std::move(inv_std);
      lc.skip_in = std::move(skip);
      lc.cheb = std::move(terms);
    }
    h = std::move(h_next);
    skip = std::move(skip_next);
  }

  StfeOutput out;
  out.features = skip;
  out.forecast = output_head(out.features, params, keep ? &c.head_hidden : nullptr);
  if (keep) c.features = out.features;
  return out;
}

// ---------------------------------------------------------------- backward

std::vector<Tensor> stfe_backward(const ForwardCache& c, const Tensor& d_features,
                                  const Tensor& d_forecast, StfeParams& params) {
  if (c.mode != Mode::Training)
    throw std::logic_error("stfe_backward: cache comes from an evaluation-mode forward pass");
  if (c.layers.empty()) throw std::logic_error("stfe_backward: forward pass kept no cache");
  const StfeConfig& cfg = params.cfg;
  const std::size_t N = c.batch, C = cfg.channels, J = cfg.cheb_order;
  if (d_features.rank() != 2 || d_features.dim(0) != N || d_features.dim(1) != C)
    throw ShapeError("stfe_backward: d_features must be [B' x C]");

  Tensor d_skip = d_features;
  if (!d_forecast.empty()) {
    const std::size_t Ch = cfg.head_channels, Q = params.head2_weight.value.dim(1);
    if (d_forecast.dim(0) != N || d_forecast.dim(1) != Q)
      throw ShapeError("stfe_backward: d_forecast must be [B' x Q]");
    Tensor act = c.head_hidden;
    for (auto& v : act.values()) v = v > 0.0 ? v : 0.0;
    ConstMatMap dy = as_matrix(d_forecast, N, Q);
    as_matrix(params.head2_weight.grad, Ch, Q).noalias() += as_matrix(act, N, Ch).transpose() * dy;
    {
      const Eigen::RowVectorXd db = dy.colwise().sum();
      for (std::size_t q = 0; q < Q; ++q) params.head2_bias.grad[q] += db(q);
    }
    Tensor d_pre({N, Ch});
    as_matrix(d_pre, N, Ch).noalias() = dy * as_matrix(params.head2_weight.value, Ch, Q).transpose();
    for (std::size_t i = 0; i < d_pre.size(); ++i)
      if (c.head_hidden[i] <= 0.0) d_pre[i] = 0.0;
    ConstMatMap dp = as_matrix(std::as_const(d_pre), N, Ch);
    as_matrix(params.head1_weight.grad, C, Ch).noalias() +=
        as_matrix(c.features, N, C).transpose() * dp;
    {
      const Eigen::RowVectorXd db = dp.colwise().sum();
      for (std::size_t k = 0; k < Ch; ++k) params.head1_bias.grad[k] += db(k);
    }
    as_matrix(d_skip, N, C).noalias() += dp * as_matrix(params.head1_weight.value, C, Ch).transpose();
  }

  std::vector<Tensor> d_lap;
  d_lap.reserve(c.laplacians.size());
  for (const auto& L : c.laplacians) d_lap.push_back(Tensor::zeros_like(L));

  auto accumulate_dlap = [&](const Tensor& dy, const Tensor& x, std::size_t width, double scale) {
    for (std::size_t b = 0; b + 1 < c.offsets.size(); ++b) {
      const std::size_t o = c.offsets[b], n = c.offsets[b + 1] - o;
      if (n == 0) continue;
      ConstMatMap dym(dy.data() + o * width, static_cast<Eigen::Index>(n),
                      static_cast<Eigen::Index>(width));
      ConstMatMap xm(x.data() + o * width, static_cast<Eigen::Index>(n),
                     static_cast<Eigen::Index>(width));
      as_matrix(d_lap[c.block_of[b]], n, n).noalias() += scale * dym * xm.transpose();
    }
  };
  auto apply_lap_transpose = [&](const Tensor& x, std::size_t width, Tensor& y, double scale) {
    for (std::size_t b = 0; b + 1 < c.offsets.size(); ++b) {
      const std::size_t o = c.offsets[b], n = c.offsets[b + 1] - o;
      if (n == 0) continue;
      ConstMatMap lm = as_matrix(c.laplacians[c.block_of[b]], n, n);
      ConstMatMap xm(x.data() + o * width, static_cast<Eigen::Index>(n),
                     static_cast<Eigen::Index>(width));
      MatMap ym(y.data() + o * width, static_cast<Eigen::Index>(n),
                static_cast<Eigen::Index>(width));
      ym.noalias() += scale * lm.transpose() * xm;
    }
  };

  const auto dil = cfg.dilations();
  Tensor d_h;  // gradient w.r.t. the graph-conv output of the current layer
  for (std::size_t li = dil.size(); li-- > 0;) {
    const LayerCache& lc = c.layers[li];
    LayerParams& lp = params.layers[li];
    const std::size_t t_in = lc.t_in, t_out = lc.t_out, M = N * t_out, width = t_out * C;

    // Graph convolution.
    Tensor d_bn({N, t_out, C});
    if (!d_h.empty()) {
      ConstMatMap dhm = as_matrix(std::as_const(d_h), M, C);
      std::vector<Tensor> d_terms;
      d_terms.reserve(J);
      for (std::size_t j = 0; j < J; ++j) {
        as_matrix(lp.cheb[j].grad, C, C).noalias() +=
            as_matrix(lc.cheb[j], M, C).transpose() * dhm;
        Tensor dt({N, t_out, C});
        as_matrix(dt, M, C).noalias() = dhm * as_matrix(lp.cheb[j].value, C, C).transpose();
        d_terms.push_back(std::move(dt));
      }
      for (std::size_t j = J; j-- > 2;) {
        apply_lap_transpose(d_terms[j], width, d_terms[j - 1], 2.0);
        d_terms[j - 2].add_(d_terms[j], -1.0);
        accumulate_dlap(d_terms[j], lc.cheb[j - 1], width, 2.0);
      }
      if (J >= 2) {
        apply_lap_transpose(d_terms[1], width, d_terms[0], 1.0);
        accumulate_dlap(d_terms[1], lc.cheb[0], width, 1.0);
      }
      d_bn = std::move(d_terms[0]);
    }

    // Skip accumulator.
    Tensor du({N, t_out, C});
    Tensor d_skip_prev({N, C});
    {
      ConstMatMap ds = as_matrix(std::as_const(d_skip), N, C);
      as_matrix(lp.skip_weight.grad, C, C).noalias() += as_matrix(lc.skip_in, N, C).transpose() * ds;
      const Eigen::RowVectorXd db = ds.colwise().sum();
      for (std::size_t ch = 0; ch < C; ++ch) lp.skip_bias.grad[ch] += db(ch);
      as_matrix(d_skip_prev, N, C).noalias() = ds * as_matrix(lp.skip_weight.value, C, C).transpose();
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t ch = 0; ch < C; ++ch) du[(i * t_out + t_out - 1) * C + ch] += d_skip.at(i, ch);
    }

    // Batch norm (training statistics).
    Tensor d_res({N, t_out, C});
    {
      std::vector<double> sum_d(C, 0.0), sum_dx(C, 0.0);
      for (std::size_t r = 0; r < M; ++r)
        for (std::size_t ch = 0; ch < C; ++ch) {
          const double g = d_bn[r * C + ch];
          sum_d[ch] += g;
          sum_dx[ch] += g * lc.xhat[r * C + ch];
        }
      for (std::size_t ch = 0; ch < C; ++ch) {
        lp.bn_beta.grad[ch] += sum_d[ch];
        lp.bn_gamma.grad[ch] += sum_dx[ch];
      }
      const double inv_m = 1.0 / static_cast<double>(M);
      for (std::size_t r = 0; r < M; ++r)
        for (std::size_t ch = 0; ch < C; ++ch) {
          const double gamma = lp.bn_gamma.value[ch];
          const double g = d_bn[r * C + ch];
          d_res[r * C + ch] = gamma * lc.inv_std[ch] * inv_m *
                              (static_cast<double>(M) * g - sum_d[ch] -
                               lc.xhat[r * C + ch] * sum_dx[ch]);
        }
    }

    // Residual: both U and the trailing input steps receive d_res.
    du.add_(d_res);
    Tensor d_in({N, t_in, C});
    const std::size_t shift = t_in - t_out;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t t = 0; t < t_out; ++t) {
        const double* src = d_res.data() + (i * t_out + t) * C;
        double* dst = d_in.data() + (i * t_in + t + shift) * C;
        for (std::size_t ch = 0; ch < C; ++ch) dst[ch] += src[ch];
      }

    // Gated activation.
    Tensor d_f({N, t_out, C}), d_g({N, t_out, C});
    for (std::size_t i = 0; i < du.size(); ++i) {
      const double th = lc.tanh_f[i], sg = lc.sigma_g[i];
      d_f[i] = du[i] * sg * (1.0 - th * th);
      d_g[i] = du[i] * th * sg * (1.0 - sg);
    }
    const std::vector<std::size_t> in_shape{N, t_in, C};
    conv1d_backward(lc.cols, in_shape, lp.filter.value, d_f, dil[li], &d_in, lp.filter.grad,
                    lp.filter_bias.grad);
    conv1d_backward(lc.cols, in_shape, lp.gate.value, d_g, dil[li], &d_in, lp.gate.grad,
                    lp.gate_bias.grad);

    d_h = std::move(d_in);
    d_skip = std::move(d_skip_prev);
  }

  // Input embedding.
  const std::size_t R = c.padded.dim(1);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t t = 0; t < R; ++t) {
      const double x = c.padded.at(i, t);
      const double* g = d_h.data() + (i * R + t) * C;
      for (std::size_t ch = 0; ch < C; ++ch) {
        params.embed_weight.grad[ch] += g[ch] * x;
        params.embed_bias.grad[ch] += g[ch];
      }
    }

  std::vector<Tensor> d_weights;
  d_weights.reserve(d_lap.size());
  for (std::size_t k = 0; k < d_lap.size(); ++k)
    d_weights.push_back(normalized_laplacian_backward(c.weights[k], d_lap[k]));
  return d_weights;
}

}  // namespace evts
