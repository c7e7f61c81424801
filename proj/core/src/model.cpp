#include "ift/model.hpp"

#include <cmath>

#include "ift/container.hpp"
#include "ift/csv.hpp"
#include "ift/error.hpp"

namespace ift::model {

using nn::Tape;
using nn::Var;

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Config, "model config: " + msg); };
  if (input_dim < 1) fail("input_dim must be positive");
  if (seq_len < 1) fail("seq_len must be positive");
  if (cnn_channels.empty()) fail("cnn_channels must not be empty");
  for (int c : cnn_channels)
    if (c < 1) fail("cnn_channels entries must be positive");
  if (kernel < 1 || kernel % 2 == 0) fail("kernel must be odd and positive");
  if (stride != 1) fail("only stride 1 is supported");
  if (d_model < 1) fail("d_model must be positive");
  if (n_head < 1 || d_model % n_head != 0) fail("d_model must be divisible by n_head");
  if (cnn_channels.back() != d_model) fail("cnn_channels must end at d_model");
  if (d_ff < 1) fail("d_ff must be positive");
  if (encoder_layers < 1) fail("encoder_layers must be positive");
  if (cnn_dropout < 0.0 || cnn_dropout >= 1.0) fail("cnn_dropout must be in [0,1)");
  if (encoder_dropout < 0.0 || encoder_dropout >= 1.0) fail("encoder_dropout must be in [0,1)");
  if (output_landmarks < 1) fail("output_landmarks must be positive");
  if (bn_eps <= 0.0 || ln_eps <= 0.0) fail("normalization epsilons must be positive");
  if (bn_momentum <= 0.0 || bn_momentum > 1.0) fail("bn_momentum must be in (0,1]");
}

namespace {

template <typename Weights, typename Fn>
void visit_conv_block(Weights& cb, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".w", cb.w, ParamRole::Conv);
  fn(prefix + ".b", cb.b, ParamRole::Conv);
  fn(prefix + ".bn_g", cb.bn_gamma, ParamRole::Norm);
  fn(prefix + ".bn_b", cb.bn_beta, ParamRole::Norm);
}

// Stable traversal of all trainable tensors.
template <typename Weights, typename Fn>
void visit_params(Weights& w, Fn&& fn) {
  visit_conv_block(w.stem, "stem", fn);
  for (size_t i = 0; i < w.blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    visit_conv_block(w.blocks[i].conv1, p + ".conv1", fn);
    visit_conv_block(w.blocks[i].conv2, p + ".conv2", fn);
    if (w.blocks[i].shortcut) visit_conv_block(*w.blocks[i].shortcut, p + ".shortcut", fn);
  }
  fn("embed.w", w.embed_w, ParamRole::Linear);
  fn("embed.b", w.embed_b, ParamRole::Linear);
  for (size_t l = 0; l < w.encoder.size(); ++l) {
    const std::string p = "enc" + std::to_string(l);
    auto& e = w.encoder[l];
    fn(p + ".ln1.g", e.ln1_gamma, ParamRole::Norm);
    fn(p + ".ln1.b", e.ln1_beta, ParamRole::Norm);
    fn(p + ".attn.wq", e.wq, ParamRole::AttentionProj);
    fn(p + ".attn.bq", e.bq, ParamRole::AttentionProj);
    fn(p + ".attn.wk", e.wk, ParamRole::AttentionProj);
    fn(p + ".attn.bk", e.bk, ParamRole::AttentionProj);
    fn(p + ".attn.wv", e.wv, ParamRole::AttentionProj);
    fn(p + ".attn.bv", e.bv, ParamRole::AttentionProj);
    fn(p + ".attn.wo", e.wo, ParamRole::AttentionProj);
    fn(p + ".attn.bo", e.bo, ParamRole::AttentionProj);
    fn(p + ".ln2.g", e.ln2_gamma, ParamRole::Norm);
    fn(p + ".ln2.b", e.ln2_beta, ParamRole::Norm);
    fn(p + ".ff1.w", e.ff1_w, ParamRole::Linear);
    fn(p + ".ff1.b", e.ff1_b, ParamRole::Linear);
    fn(p + ".ff2.w", e.ff2_w, ParamRole::Linear);
    fn(p + ".ff2.b", e.ff2_b, ParamRole::Linear);
  }
  fn("head.w", w.head_w, ParamRole::Linear);
  fn("head.b", w.head_b, ParamRole::Linear);
}

template <typename Weights, typename Fn>
void visit_running_stats(Weights& w, Fn&& fn) {
  auto stats = [&](auto& cb, const std::string& prefix) {
    fn(prefix + ".bn_mean", cb.bn_mean, ParamRole::Norm);
    fn(prefix + ".bn_var", cb.bn_var, ParamRole::Norm);
  };
  stats(w.stem, "stem");
  for (size_t i = 0; i < w.blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    stats(w.blocks[i].conv1, p + ".conv1");
    stats(w.blocks[i].conv2, p + ".conv2");
    if (w.blocks[i].shortcut) stats(*w.blocks[i].shortcut, p + ".shortcut");
  }
}

ConvBlock make_conv_block(int cin, int cout, int k, Rng& rng) {
  ConvBlock cb;
  const double limit = 1.0 / std::sqrt(static_cast<double>(cin * k));
  cb.w = Tensor::uniform({cout, cin, k}, rng, -limit, limit);
  cb.b = Tensor::zeros({cout});
  cb.bn_gamma = Tensor::full({cout}, 1.0);
  cb.bn_beta = Tensor::zeros({cout});
  cb.bn_mean = Tensor::zeros({cout});
  cb.bn_var = Tensor::full({cout}, 1.0);
  return cb;
}

Tensor linear_init(int din, int dout, Rng& rng) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(din));
  return Tensor::uniform({din, dout}, rng, -limit, limit);
}

}  // namespace

std::vector<NetworkWeights::ParamRef> NetworkWeights::params() {
  std::vector<ParamRef> out;
  visit_params(*this, [&](const std::string& name, Tensor& t, ParamRole role) {
    out.push_back({name, &t, role});
  });
  return out;
}

std::vector<NetworkWeights::ParamRef> NetworkWeights::params() const {
  // shared traversal; pointers are used read-only by serialization
  return const_cast<NetworkWeights*>(this)->params();
}

std::vector<NetworkWeights::ParamRef> NetworkWeights::running_stats() {
  std::vector<ParamRef> out;
  visit_running_stats(*this, [&](const std::string& name, Tensor& t, ParamRole role) {
    out.push_back({name, &t, role});
  });
  return out;
}

NetworkWeights init_weights(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, /*stream=*/0x11));
  NetworkWeights w;
  w.config = config;

  w.stem = make_conv_block(config.input_dim, config.cnn_channels[0], config.kernel, rng);
  for (size_t i = 1; i < config.cnn_channels.size(); ++i) {
    const int cin = config.cnn_channels[i - 1];
    const int cout = config.cnn_channels[i];
    ResidualBlock rb;
    rb.conv1 = make_conv_block(cin, cout, config.kernel, rng);
    rb.conv2 = make_conv_block(cout, cout, config.kernel, rng);
    if (cin != cout) rb.shortcut = make_conv_block(cin, cout, 1, rng);
    w.blocks.push_back(std::move(rb));
  }

  w.embed_w = linear_init(config.d_model, config.d_model, rng);
  w.embed_b = Tensor::zeros({config.d_model});

  for (int l = 0; l < config.encoder_layers; ++l) {
    EncoderLayer e;
    e.ln1_gamma = Tensor::full({config.d_model}, 1.0);
    e.ln1_beta = Tensor::zeros({config.d_model});
    e.wq = linear_init(config.d_model, config.d_model, rng);
    e.bq = Tensor::zeros({config.d_model});
    e.wk = linear_init(config.d_model, config.d_model, rng);
    e.bk = Tensor::zeros({config.d_model});
    e.wv = linear_init(config.d_model, config.d_model, rng);
    e.bv = Tensor::zeros({config.d_model});
    e.wo = linear_init(config.d_model, config.d_model, rng);
    e.bo = Tensor::zeros({config.d_model});
    e.ln2_gamma = Tensor::full({config.d_model}, 1.0);
    e.ln2_beta = Tensor::zeros({config.d_model});
    e.ff1_w = linear_init(config.d_model, config.d_ff, rng);
    e.ff1_b = Tensor::zeros({config.d_ff});
    e.ff2_w = linear_init(config.d_ff, config.d_model, rng);
    e.ff2_b = Tensor::zeros({config.d_model});
    w.encoder.push_back(std::move(e));
  }

  w.head_w = linear_init(config.d_model, 2 * config.output_landmarks, rng);
  w.head_b = Tensor::zeros({2 * config.output_landmarks});
  return w;
}

int64_t count_parameters(const NetworkWeights& weights) {
  int64_t n = 0;
  for (const auto& p : weights.params()) n += p.tensor->size();
  return n;
}

BoundNetwork bind_weights(Tape& tape, NetworkWeights& weights, Trainable trainable) {
  BoundNetwork net;
  net.config = &weights.config;
  net.weights = &weights;

  auto grad_enabled = [&](ParamRole role) {
    switch (trainable) {
      case Trainable::None:
        return false;
      case Trainable::All:
        return true;
      case Trainable::LinearOnly:
        return role == ParamRole::Linear;
    }
    return false;
  };

  // bind in traversal order so trainable vars line up with params()
  std::vector<Var> vars;
  visit_params(weights, [&](const std::string& name, Tensor& t, ParamRole role) {
    const bool rg = grad_enabled(role);
    Var v = tape.leaf(t, rg);
    if (rg) net.trainable.push_back({name, v, &t, role});
    vars.push_back(v);
  });

  size_t k = 0;
  auto next = [&] { return vars[k++]; };
  auto bind_conv = [&](ConvBlock& cb) {
    BoundNetwork::ConvBlockVars v;
    v.w = next();
    v.b = next();
    v.gamma = next();
    v.beta = next();
    v.bn_mean = &cb.bn_mean;
    v.bn_var = &cb.bn_var;
    return v;
  };

  net.stem = bind_conv(weights.stem);
  for (auto& rb : weights.blocks) {
    BoundNetwork::ResidualVars rv;
    rv.conv1 = bind_conv(rb.conv1);
    rv.conv2 = bind_conv(rb.conv2);
    if (rb.shortcut) rv.shortcut = bind_conv(*rb.shortcut);
    net.blocks.push_back(rv);
  }
  net.embed_w = next();
  net.embed_b = next();
  for (size_t l = 0; l < weights.encoder.size(); ++l) {
    BoundNetwork::EncoderVars e;
    e.ln1_g = next();
    e.ln1_b = next();
    e.wq = next();
    e.bq = next();
    e.wk = next();
    e.bk = next();
    e.wv = next();
    e.bv = next();
    e.wo = next();
    e.bo = next();
    e.ln2_g = next();
    e.ln2_b = next();
    e.ff1_w = next();
    e.ff1_b = next();
    e.ff2_w = next();
    e.ff2_b = next();
    net.encoder.push_back(e);
  }
  net.head_w = next();
  net.head_b = next();
  return net;
}

Var forward_bound(Tape& tape, const BoundNetwork& net, Var input, Mode mode, Rng* dropout_rng,
                  Tensor* cnn_features) {
  const ModelConfig& cfg = *net.config;
  const Tensor& in = tape.value(input);
  const bool lifted = in.rank() == 2;
  if (lifted) input = tape.reshape(input, {1, in.shape[0], in.shape[1]});
  const Tensor& in3 = tape.value(input);
  if (in3.rank() != 3 || in3.shape[1] != cfg.seq_len || in3.shape[2] != cfg.input_dim) {
    throw Error(ErrorKind::Data, "window shape " + in.shape_str() + " does not match [" +
                                     std::to_string(cfg.seq_len) + " x " + std::to_string(cfg.input_dim) + "]");
  }
  const int64_t B = in3.shape[0];
  const bool train = mode == Mode::Train;
  if (train && (cfg.cnn_dropout > 0.0 || cfg.encoder_dropout > 0.0) && !dropout_rng) {
    throw Error(ErrorKind::Config, "train-mode forward requires a dropout RNG");
  }
  auto drop = [&](Var x, double p) {
    return train && p > 0.0 ? tape.dropout(x, p, *dropout_rng, true) : x;
  };
  auto conv_bn = [&](Var x, const BoundNetwork::ConvBlockVars& cb) {
    Var y = tape.conv1d_same(x, cb.w, cb.b);
    return tape.batch_norm(y, cb.gamma, cb.beta, cb.bn_mean, cb.bn_var, train, cfg.bn_eps,
                           cfg.bn_momentum);
  };

  // CNN over channels [B, input_dim, seq]
  Var h = tape.transpose_12(input);
  h = drop(tape.relu(conv_bn(h, net.stem)), cfg.cnn_dropout);
  for (const auto& rb : net.blocks) {
    Var y = drop(tape.relu(conv_bn(h, rb.conv1)), cfg.cnn_dropout);
    y = conv_bn(y, rb.conv2);
    Var s = rb.shortcut ? conv_bn(h, *rb.shortcut) : h;
    h = drop(tape.relu(tape.add(y, s)), cfg.cnn_dropout);
  }
  Var feats = tape.transpose_12(h);  // [B, seq, d_model]
  if (cnn_features) *cnn_features = tape.value(feats);

  // value embedding + fixed sinusoidal positions
  Var x = tape.linear(feats, net.embed_w, net.embed_b);
  x = tape.add_const_broadcast(x, positional_encoding(cfg.seq_len, cfg.d_model));

  // pre-norm encoder
  for (const auto& e : net.encoder) {
    Var a = tape.layer_norm(x, e.ln1_g, e.ln1_b, cfg.ln_eps);
    nn::AttentionVars av{e.wq, e.bq, e.wk, e.bk, e.wv, e.bv, e.wo, e.bo};
    a = multi_head_attention(tape, a, av, cfg.n_head);
    x = tape.add(x, drop(a, cfg.encoder_dropout));

    Var f = tape.layer_norm(x, e.ln2_g, e.ln2_b, cfg.ln_eps);
    f = tape.linear(f, e.ff1_w, e.ff1_b);
    f = drop(tape.relu(f), cfg.encoder_dropout);
    f = tape.linear(f, e.ff2_w, e.ff2_b);
    x = tape.add(x, drop(f, cfg.encoder_dropout));
  }

  // last-token readout
  Var last = tape.select_time(x, cfg.seq_len - 1);
  Var out = tape.add_rowvec(tape.matmul(last, net.head_w), net.head_b);
  out = tape.reshape(out, {B, cfg.output_landmarks, 2});
  if (!tape.value(out).all_finite()) {
    throw Error(ErrorKind::Numeric, "forward produced non-finite predictions");
  }
  if (lifted) out = tape.reshape(out, {cfg.output_landmarks, 2});
  return out;
}

Tensor forward(NetworkWeights& weights, const Tensor& input, Mode mode, Rng* dropout_rng,
               Tensor* cnn_features) {
  Tape tape;
  BoundNetwork net = bind_weights(tape, weights, Trainable::None);
  Var out = forward_bound(tape, net, tape.leaf(input), mode, dropout_rng, cnn_features);
  return tape.value(out);
}

Tensor forward_eval(const NetworkWeights& weights, const Tensor& input, Tensor* cnn_features) {
  // eval mode reads but never writes the running statistics
  return forward(const_cast<NetworkWeights&>(weights), input, Mode::Eval, nullptr, cnn_features);
}

Var wing_loss(Tape& tape, Var pred, Var target, const WingLossParams& params) {
  Var diff = tape.sub(pred, target);
  Var d2 = tape.sum_last(tape.mul(diff, diff));
  Var dist = tape.sqrt_guarded(d2);
  return tape.mean_all(tape.wing(dist, params.w, params.epsilon));
}

double wing_loss(const Tensor& pred, const Tensor& target, const WingLossParams& params) {
  Tape tape;
  Var loss = wing_loss(tape, tape.leaf(pred), tape.leaf(target), params);
  return tape.value(loss)[0];
}

Tensor positional_encoding(int seq_len, int d_model) {
  Tensor pe({seq_len, d_model});
  for (int t = 0; t < seq_len; ++t) {
    for (int i = 0; i < d_model; i += 2) {
      const double rate = std::pow(10000.0, -static_cast<double>(i) / d_model);
      pe.at(t, i) = std::sin(t * rate);
      if (i + 1 < d_model) pe.at(t, i + 1) = std::cos(t * rate);
    }
  }
  return pe;
}

void save_weights(const NetworkWeights& weights, const std::filesystem::path& path) {
  const ModelConfig& c = weights.config;
  io::Container box;
  box.set_config("format", "network-weights");
  box.set_config("format_version", std::to_string(NetworkWeights::kFormatVersion));
  box.set_config("input_dim", std::to_string(c.input_dim));
  box.set_config("seq_len", std::to_string(c.seq_len));
  std::string channels;
  for (size_t i = 0; i < c.cnn_channels.size(); ++i)
    channels += (i ? "," : "") + std::to_string(c.cnn_channels[i]);
  box.set_config("cnn_channels", channels);
  box.set_config("kernel", std::to_string(c.kernel));
  box.set_config("stride", std::to_string(c.stride));
  box.set_config("cnn_dropout", io::format_double(c.cnn_dropout));
  box.set_config("d_model", std::to_string(c.d_model));
  box.set_config("n_head", std::to_string(c.n_head));
  box.set_config("d_ff", std::to_string(c.d_ff));
  box.set_config("encoder_layers", std::to_string(c.encoder_layers));
  box.set_config("encoder_dropout", io::format_double(c.encoder_dropout));
  box.set_config("output_landmarks", std::to_string(c.output_landmarks));
  box.set_config("bn_eps", io::format_double(c.bn_eps));
  box.set_config("bn_momentum", io::format_double(c.bn_momentum));
  box.set_config("ln_eps", io::format_double(c.ln_eps));

  auto& mutable_weights = const_cast<NetworkWeights&>(weights);
  for (const auto& p : mutable_weights.params()) box.put(p.name, *p.tensor);
  for (const auto& p : mutable_weights.running_stats()) box.put(p.name, *p.tensor);
  box.save(path);
}

NetworkWeights load_weights(const std::filesystem::path& path) {
  io::Container box = io::Container::load(path);
  if (box.config_value("format") != "network-weights") {
    throw Error(ErrorKind::Data, path.string() + " is not a network weight file");
  }
  ModelConfig c;
  c.input_dim = static_cast<int>(std::stol(box.config_value("input_dim")));
  c.seq_len = static_cast<int>(std::stol(box.config_value("seq_len")));
  c.cnn_channels.clear();
  for (const auto& tok : io::split_csv(box.config_value("cnn_channels"))) {
    c.cnn_channels.push_back(static_cast<int>(std::stol(tok)));
  }
  c.kernel = static_cast<int>(std::stol(box.config_value("kernel")));
  c.stride = static_cast<int>(std::stol(box.config_value("stride")));
  c.cnn_dropout = io::parse_double(box.config_value("cnn_dropout"), "weights config cnn_dropout");
  c.d_model = static_cast<int>(std::stol(box.config_value("d_model")));
  c.n_head = static_cast<int>(std::stol(box.config_value("n_head")));
  c.d_ff = static_cast<int>(std::stol(box.config_value("d_ff")));
  c.encoder_layers = static_cast<int>(std::stol(box.config_value("encoder_layers")));
  c.encoder_dropout = io::parse_double(box.config_value("encoder_dropout"), "weights config encoder_dropout");
  c.output_landmarks = static_cast<int>(std::stol(box.config_value("output_landmarks")));
  c.bn_eps = io::parse_double(box.config_value("bn_eps"), "weights config bn_eps");
  c.bn_momentum = io::parse_double(box.config_value("bn_momentum"), "weights config bn_momentum");
  c.ln_eps = io::parse_double(box.config_value("ln_eps"), "weights config ln_eps");

  NetworkWeights w = init_weights(c, 0);
  auto fill = [&](NetworkWeights::ParamRef ref) {
    Tensor stored = box.get(ref.name);
    if (stored.shape != ref.tensor->shape) {
      throw Error(ErrorKind::Data, "weights tensor '" + ref.name + "' has shape " + stored.shape_str() +
                                       ", expected " + ref.tensor->shape_str());
    }
    if (!stored.all_finite()) {
      throw Error(ErrorKind::Data, "weights tensor '" + ref.name + "' contains non-finite values");
    }
    *ref.tensor = std::move(stored);
  };
  for (const auto& p : w.params()) fill(p);
  for (const auto& p : w.running_stats()) fill(p);
  return w;
}

}  // namespace ift::model
