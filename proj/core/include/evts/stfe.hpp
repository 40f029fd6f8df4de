#pragma once

// Spatio-temporal feature extractor: input embedding, blocks of gated dilated
// convolution layers with residual batch normalization, a skip accumulator and
// per-layer Chebyshev graph convolution, followed by a two-stage 1x1 head.
//
// Activations use a channel-last [rows x time x channels] layout. Linear maps
// are stored as [in x out] matrices and applied as x * W.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "evts/flat_batching.hpp"
#include "evts/numerics.hpp"

namespace evts {

struct StfeConfig {
  std::size_t channels = 32;
  std::size_t blocks = 4;
  std::size_t layers = 2;
  std::size_t kernel_size = 2;
  std::size_t dilation_rate = 2;
  std::size_t cheb_order = 3;
  std::size_t head_channels = 64;
  std::size_t history = 12;
  std::size_t horizon = 12;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  std::size_t num_layers() const { return blocks * layers; }
  /// Dilation of every layer in execution order: rate^(l-1) within each block.
  std::vector<std::size_t> dilations() const;
  std::size_t receptive_field() const;
  /// Zeros prepended to each input row so the last layer ends at length 1.
  std::size_t padding() const;
  /// Input length of each layer followed by the final output length.
  std::vector<std::size_t> temporal_lengths() const;
  void validate() const;
};

struct LayerParams {
  Parameter filter;       // C x C x k
  Parameter filter_bias;  // C
  Parameter gate;         // C x C x k
  Parameter gate_bias;    // C
  Parameter bn_gamma;     // C
  Parameter bn_beta;      // C
  Parameter skip_weight;  // C x C
  Parameter skip_bias;    // C
  std::vector<Parameter> cheb;  // J matrices C x C
  Tensor running_mean;    // C
  Tensor running_var;     // C
};

struct StfeParams {
  StfeConfig cfg;
  Parameter embed_weight;  // C
  Parameter embed_bias;    // C
  std::vector<LayerParams> layers;  // block-major
  Parameter head1_weight;  // C x C_head
  Parameter head1_bias;    // C_head
  Parameter head2_weight;  // C_head x Q
  Parameter head2_bias;    // Q

  static StfeParams init(const StfeConfig& cfg, Rng& rng);

  /// Canonical names: stfe.embed.weight, stfe.block2.layer1.filter, ...
  template <class F>
  void for_each(F&& f) {
    f("stfe.embed.weight", embed_weight);
    f("stfe.embed.bias", embed_bias);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = layer_prefix(i);
      LayerParams& lp = layers[i];
      f(p + "filter", lp.filter);
      f(p + "filter_bias", lp.filter_bias);
      f(p + "gate", lp.gate);
      f(p + "gate_bias", lp.gate_bias);
      f(p + "bn.gamma", lp.bn_gamma);
      f(p + "bn.beta", lp.bn_beta);
      f(p + "skip.weight", lp.skip_weight);
      f(p + "skip.bias", lp.skip_bias);
      for (std::size_t j = 0; j < lp.cheb.size(); ++j)
        f(p + "cheb" + std::to_string(j + 1), lp.cheb[j]);
    }
    f("head.fc1.weight", head1_weight);
    f("head.fc1.bias", head1_bias);
    f("head.fc2.weight", head2_weight);
    f("head.fc2.bias", head2_bias);
  }

  /// Non-learnable state (batch-norm running statistics).
  template <class F>
  void for_each_buffer(F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = layer_prefix(i);
      f(p + "bn.running_mean", layers[i].running_mean);
      f(p + "bn.running_var", layers[i].running_var);
    }
  }

  std::string layer_prefix(std::size_t layer_index) const;
};

enum class Mode { Training, Evaluation };

struct LayerCache {
  std::size_t t_in = 0;
  std::size_t t_out = 0;
  Tensor input;      // N x t_in x C
  Tensor cols;       // im2col of input
  Tensor tanh_f;     // N x t_out x C
  Tensor sigma_g;    // N x t_out x C
  Tensor xhat;       // normalized residual, N x t_out x C
  Tensor inv_std;    // C
  Tensor skip_in;    // N x C, accumulator before this layer
  std::vector<Tensor> cheb;  // J terms, each N x t_out x C
};

struct ForwardCache {
  Mode mode = Mode::Evaluation;
  std::size_t batch = 0;
  Tensor padded;  // N x R
  std::vector<LayerCache> layers;
  Tensor features;     // N x C
  Tensor head_hidden;  // N x C_head, before ReLU
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> block_of;
  std::vector<Tensor> weights;     // unique adjacency blocks
  std::vector<Tensor> laplacians;  // their normalized Laplacians
};

struct StfeOutput {
  Tensor features;  // B' x C
  Tensor forecast;  // B' x Q
};

/// rows: B' x H. Training mode uses batch statistics and updates the running
/// ones; evaluation mode is a fixed per-row map given the graph.
StfeOutput stfe_forward(const Tensor& rows, const HolisticGraph& graph, StfeParams& params,
                        Mode mode, ForwardCache* cache = nullptr);
StfeOutput stfe_forward(const FlatBatch& flat, const HolisticGraph& graph, StfeParams& params,
                        Mode mode, ForwardCache* cache = nullptr);

/// relu(H * W1 + b1) * W2 + b2.
Tensor output_head(const Tensor& features, const StfeParams& params, Tensor* hidden = nullptr);

/// Accumulates parameter gradients for upstream d_features (B' x C) and
/// d_forecast (B' x Q, may be empty). Returns the gradient w.r.t. each unique
/// adjacency block of the graph used in the forward pass.
std::vector<Tensor> stfe_backward(const ForwardCache& cache, const Tensor& d_features,
                                  const Tensor& d_forecast, StfeParams& params);

/// sum_j T_j * Theta_j with T_1 = X, T_2 = L X, T_j = 2 L T_{j-1} - T_{j-2}.
Tensor chebyshev_conv(const Tensor& laplacian, const Tensor& x, std::span<const Tensor> thetas);

}  // namespace evts
