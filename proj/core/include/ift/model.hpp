#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ift/autodiff.hpp"
#include "ift/rng.hpp"
#include "ift/tensor.hpp"

namespace ift::model {

// Convolutional-transformer regressor: residual 1D CNN over the feature
// channels, value embedding + sinusoidal positions, pre-norm transformer
// encoder, linear head on the last token.
struct ModelConfig {
  int input_dim = 216;
  int seq_len = 10;
  std::vector<int> cnn_channels = {64, 128, 256, 512};
  int kernel = 3;
  int stride = 1;
  double cnn_dropout = 0.15;
  int d_model = 512;
  int n_head = 4;
  int d_ff = 1024;
  int encoder_layers = 2;
  double encoder_dropout = 0.1;
  int output_landmarks = 51;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  double ln_eps = 1e-12;

  void validate() const;  // throws Error(Config)
};

enum class ParamRole {
  Conv,           // convolution weights/biases
  Norm,           // batch/layer norm affine parameters
  AttentionProj,  // q/k/v/output projections
  Linear,         // value embedding, feed-forward, head (fine-tunable set)
};

struct ConvBlock {
  Tensor w, b;                // [Cout,Cin,K], [Cout]
  Tensor bn_gamma, bn_beta;   // [Cout]
  Tensor bn_mean, bn_var;     // running statistics, not trainable
};

struct ResidualBlock {
  ConvBlock conv1, conv2;
  std::optional<ConvBlock> shortcut;  // 1x1 projection when channels change
};

struct EncoderLayer {
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gamma, ln2_beta;
  Tensor ff1_w, ff1_b;  // [d_model, d_ff]
  Tensor ff2_w, ff2_b;  // [d_ff, d_model]
};

struct NetworkWeights {
  static constexpr uint32_t kFormatVersion = 1;
  ModelConfig config;
  ConvBlock stem;
  std::vector<ResidualBlock> blocks;
  Tensor embed_w, embed_b;
  std::vector<EncoderLayer> encoder;
  Tensor head_w, head_b;

  struct ParamRef {
    std::string name;
    Tensor* tensor;
    ParamRole role;
  };
  // Trainable tensors in a stable traversal order.
  std::vector<ParamRef> params();
  std::vector<ParamRef> params() const;  // const view (tensor pointers non-owning)
  // Running statistics (serialized, never trained).
  std::vector<ParamRef> running_stats();
};

struct WingLossParams {
  double w = 20.0;
  double epsilon = 2.0;
  double C() const { return w - w * std::log(1.0 + w / epsilon); }
};

NetworkWeights init_weights(const ModelConfig& config, uint64_t seed);

int64_t count_parameters(const NetworkWeights& weights);

enum class Mode { Train, Eval };

// Which parameters are bound with gradients enabled.
enum class Trainable { None, All, LinearOnly };

struct BoundParam {
  std::string name;
  nn::Var var;
  Tensor* tensor = nullptr;
  ParamRole role = ParamRole::Linear;
};

// Weights bound onto a tape plus the graph-building state for one forward.
struct BoundNetwork {
  const ModelConfig* config = nullptr;
  NetworkWeights* weights = nullptr;
  std::vector<BoundParam> trainable;  // only those with gradients enabled

  struct ConvBlockVars {
    nn::Var w, b, gamma, beta;
    Tensor* bn_mean;
    Tensor* bn_var;
  };
  struct ResidualVars {
    ConvBlockVars conv1, conv2;
    std::optional<ConvBlockVars> shortcut;
  };
  struct EncoderVars {
    nn::Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
  };
  ConvBlockVars stem;
  std::vector<ResidualVars> blocks;
  nn::Var embed_w, embed_b;
  std::vector<EncoderVars> encoder;
  nn::Var head_w, head_b;
};

BoundNetwork bind_weights(nn::Tape& tape, NetworkWeights& weights, Trainable trainable);

// Forward over bound weights. input: [B, seq_len, input_dim] (or
// [seq_len, input_dim]). Returns predictions [B, 51, 2] (or [51, 2]).
// Train mode needs a dropout RNG; batch-norm running stats update in place.
// cnn_features, when set, receives the post-CNN activations [B, seq, d_model].
nn::Var forward_bound(nn::Tape& tape, const BoundNetwork& net, nn::Var input, Mode mode,
                      Rng* dropout_rng = nullptr, Tensor* cnn_features = nullptr);

// Convenience forward on one window or a batch. Train mode updates the
// batch-norm running statistics in place.
Tensor forward(NetworkWeights& weights, const Tensor& input, Mode mode, Rng* dropout_rng = nullptr,
               Tensor* cnn_features = nullptr);
// Eval-mode forward on immutable weights.
Tensor forward_eval(const NetworkWeights& weights, const Tensor& input, Tensor* cnn_features = nullptr);

// Mean wing transform of per-landmark Euclidean distances.
nn::Var wing_loss(nn::Tape& tape, nn::Var pred, nn::Var target, const WingLossParams& params);
double wing_loss(const Tensor& pred, const Tensor& target, const WingLossParams& params);

// Sinusoidal position table [seq_len, d_model].
Tensor positional_encoding(int seq_len, int d_model);

void save_weights(const NetworkWeights& weights, const std::filesystem::path& path);
NetworkWeights load_weights(const std::filesystem::path& path);

}  // namespace ift::model
