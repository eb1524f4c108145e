#pragma once

// The three parametric networks: speech encoder (strided 1-d convolutions over
// the raw waveform down to a 128-d embedding), image generator (transposed
// convolutions from the embedding, dropout kept active at inference), and the
// spectrally normalized image discriminator with spatial embedding
// concatenation at 4x4.

#include <cstdint>
#include <string>
#include <vector>

#include "wav2pix/nn_ops.hpp"
#include "wav2pix/params.hpp"
#include "wav2pix/rng.hpp"

namespace wav2pix::nets {

struct EncoderConfig {
  int num_layers = 6;
  int kernel = 15;
  int stride = 4;
  int padding = 7;  // (kernel-1)/2, keeps each stage an exact /stride decimation
  std::vector<int> channel_plan = {32, 64, 128, 256, 512, 1024};
  std::vector<int> fc_hidden = {1024, 256};
  int embedding_dim = 128;
  double leaky_slope = 0.2;
  int input_samples = 16384;
  bool batchnorm = false;

  int64_t decimation() const {
    int64_t d = 1;
    for (int i = 0; i < num_layers; ++i) d *= stride;
    return d;
  }
  int64_t conv_out_length() const { return input_samples / decimation(); }
  int64_t flattened_dim() const { return channel_plan.back() * conv_out_length(); }

  void validate() const {
    require(static_cast<int>(channel_plan.size()) == num_layers,
            "encoder: channel plan must list one width per layer");
    require(input_samples > 0 && input_samples % decimation() == 0,
            "encoder: input samples must be a positive multiple of " +
                std::to_string(decimation()));
    require(embedding_dim > 0, "encoder: embedding dim must be positive");
  }
};

struct GeneratorConfig {
  int embedding_dim = 128;
  int num_upsample = 4;  // 4 -> 64x64, 5 -> 128x128
  int base_channels = 512;
  double dropout_p = 0.5;
  int dropout_blocks = 2;  // dropout lives in the first two upsample blocks
  int output_channels = 3;

  int image_size() const { return 4 << num_upsample; }
  int block_in_channels(int i) const { return base_channels >> i; }
  int block_out_channels(int i) const {
    return i == num_upsample - 1 ? output_channels : base_channels >> (i + 1);
  }

  void validate() const {
    require(num_upsample >= 1, "generator: invalid upsample count");
    require(base_channels >> (num_upsample - 1) >= 1,
            "generator: base channels too small for upsample count");
    require(embedding_dim > 0 && output_channels > 0, "generator: invalid channel config");
    require(dropout_blocks <= num_upsample, "generator: dropout block count exceeds blocks");
  }
};

struct DiscriminatorConfig {
  int kernel = 4;
  int stride = 2;
  std::vector<int> channel_plan = {64, 128, 256, 512};
  double leaky_slope = 0.2;
  int embed_spatial = 4;
  int embedding_dim = 128;
  int image_size = 64;

  static DiscriminatorConfig for_image_size(int s, int embedding_dim = 128) {
    DiscriminatorConfig cfg;
    require(s == 64 || s == 128, "discriminator: image size must be 64 or 128");
    if (s == 128) cfg.channel_plan = {32, 64, 128, 256, 512};
    cfg.image_size = s;
    cfg.embedding_dim = embedding_dim;
    return cfg;
  }

  void validate() const {
    int side = image_size;
    for (size_t i = 0; i < channel_plan.size(); ++i) side /= stride;
    require(side == embed_spatial,
            "discriminator: conv stack must reach exactly " + std::to_string(embed_spatial) +
                "x" + std::to_string(embed_spatial) + " before embedding concatenation");
  }
};

struct ModelConfig {
  EncoderConfig encoder;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  int num_identities = 2;

  void validate() const {
    encoder.validate();
    generator.validate();
    discriminator.validate();
    require(encoder.embedding_dim == generator.embedding_dim &&
                encoder.embedding_dim == discriminator.embedding_dim,
            "model: embedding dims disagree");
    require(generator.image_size() == discriminator.image_size,
            "model: generator/discriminator resolutions disagree");
    require(num_identities >= 2, "model: need at least 2 identities");
  }
};

// Production configuration for a given resolution and (padded) chunk length.
inline ModelConfig make_model_config(int image_size, int input_samples, int num_identities) {
  ModelConfig cfg;
  cfg.encoder.input_samples = input_samples;
  cfg.generator.num_upsample = image_size == 128 ? 5 : 4;
  require(cfg.generator.image_size() == image_size,
          "model: image size must be 64 or 128");
  cfg.discriminator = DiscriminatorConfig::for_image_size(image_size);
  cfg.num_identities = num_identities;
  cfg.validate();
  return cfg;
}

// Reduced stack used by the finite-difference gradient check: ~3e4 parameters,
// 16x16 images, 4096-sample chunks.
inline ModelConfig tiny_model_config(int num_identities = 3) {
  ModelConfig cfg;
  cfg.encoder.channel_plan = {4, 8, 12, 16, 24, 32};
  cfg.encoder.fc_hidden = {24, 16};
  cfg.encoder.embedding_dim = 8;
  cfg.encoder.input_samples = 4096;
  cfg.generator.embedding_dim = 8;
  cfg.generator.num_upsample = 2;
  cfg.generator.base_channels = 16;
  cfg.discriminator.channel_plan = {8, 16};
  cfg.discriminator.embedding_dim = 8;
  cfg.discriminator.image_size = 16;
  cfg.num_identities = num_identities;
  cfg.validate();
  return cfg;
}

// floor((L + 2*padding - kernel) / stride) + 1, guarded against collapse.
inline int64_t conv1d_output_length(int64_t length, int kernel, int stride, int padding) {
  require(length > 0, "conv1d_output_length: input length must be positive");
  int64_t out = ag::conv_output_length(length, kernel, stride, padding);
  require(out >= 1, "conv1d_output_length: output length would be < 1");
  return out;
}

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

template <typename T>
Tensor<T> normal_tensor(std::vector<int64_t> shape, Rng& rng, double stddev) {
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <typename T>
Tensor<T> unit_vector(int64_t n, Rng& rng) {
  Tensor<T> t({n});
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double v = rng.normal();
      t[i] = static_cast<T>(v);
      norm2 += v * v;
    }
  } while (norm2 < 1e-20);
  T inv = static_cast<T>(1.0 / std::sqrt(norm2));
  for (int64_t i = 0; i < n; ++i) t[i] *= inv;
  return t;
}

template <typename T>
void add_batchnorm(ParameterSet<T>& ps, const std::string& prefix, int64_t channels) {
  ps.add(prefix + ".gamma", Tensor<T>::full({channels}, T(1)));
  ps.add(prefix + ".beta", Tensor<T>::zeros({channels}));
  ps.add(prefix + ".running_mean", Tensor<T>::zeros({channels}), false);
  ps.add(prefix + ".running_var", Tensor<T>::full({channels}, T(1)), false);
}

}  // namespace detail

// Conv and affine weights ~ N(0, 0.02^2), biases zero, batch-norm scale 1 and
// shift 0, spectral-norm u vectors random unit norm. Deterministic by seed.
template <typename T>
ParameterSet<T> init_parameters(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  constexpr double kStddev = 0.02;
  Rng rng(mix_seed(seed, 0x172a));
  ParameterSet<T> ps;

  const EncoderConfig& e = cfg.encoder;
  int in_ch = 1;
  for (int i = 0; i < e.num_layers; ++i) {
    std::string name = "enc.conv" + std::to_string(i);
    ps.add(name + ".w",
           detail::normal_tensor<T>({e.channel_plan[static_cast<size_t>(i)], in_ch, e.kernel},
                                    rng, kStddev));
    ps.add(name + ".b", Tensor<T>::zeros({e.channel_plan[static_cast<size_t>(i)]}));
    if (e.batchnorm)
      detail::add_batchnorm(ps, "enc.bn" + std::to_string(i),
                            e.channel_plan[static_cast<size_t>(i)]);
    in_ch = e.channel_plan[static_cast<size_t>(i)];
  }
  int64_t fc_in = e.flattened_dim();
  std::vector<int64_t> fc_dims(e.fc_hidden.begin(), e.fc_hidden.end());
  fc_dims.push_back(e.embedding_dim);
  for (size_t i = 0; i < fc_dims.size(); ++i) {
    std::string name = "enc.fc" + std::to_string(i);
    ps.add(name + ".w", detail::normal_tensor<T>({fc_dims[i], fc_in}, rng, kStddev));
    ps.add(name + ".b", Tensor<T>::zeros({fc_dims[i]}));
    fc_in = fc_dims[i];
  }

  const GeneratorConfig& g = cfg.generator;
  ps.add("gen.proj.w",
         detail::normal_tensor<T>({g.embedding_dim, g.base_channels, 4, 4}, rng, kStddev));
  ps.add("gen.proj.b", Tensor<T>::zeros({g.base_channels}));
  detail::add_batchnorm(ps, "gen.bn0", g.base_channels);
  for (int i = 0; i < g.num_upsample; ++i) {
    std::string name = "gen.up" + std::to_string(i);
    ps.add(name + ".w",
           detail::normal_tensor<T>({g.block_in_channels(i), g.block_out_channels(i), 4, 4}, rng,
                                    kStddev));
    ps.add(name + ".b", Tensor<T>::zeros({g.block_out_channels(i)}));
    if (i < g.num_upsample - 1)
      detail::add_batchnorm(ps, "gen.bn" + std::to_string(i + 1), g.block_out_channels(i));
  }

  const DiscriminatorConfig& d = cfg.discriminator;
  in_ch = 3;
  for (size_t i = 0; i < d.channel_plan.size(); ++i) {
    std::string name = "disc.conv" + std::to_string(i);
    int out_ch = d.channel_plan[i];
    ps.add(name + ".w", detail::normal_tensor<T>({out_ch, in_ch, d.kernel, d.kernel}, rng,
                                                 kStddev));
    ps.add(name + ".b", Tensor<T>::zeros({out_ch}));
    ps.add(name + ".u", detail::unit_vector<T>(out_ch, rng), false);
    in_ch = out_ch;
  }
  ps.add("disc.final.w", detail::normal_tensor<T>(
                             {1, in_ch + d.embedding_dim, d.kernel, d.kernel}, rng, kStddev));
  ps.add("disc.final.b", Tensor<T>::zeros({1}));
  ps.add("disc.final.u", detail::unit_vector<T>(1, rng), false);

  ps.add("head.w",
         detail::normal_tensor<T>({cfg.num_identities, e.embedding_dim}, rng, kStddev));
  ps.add("head.b", Tensor<T>::zeros({cfg.num_identities}));
  return ps;
}

// ---------------------------------------------------------------------------
// Forward passes

template <typename T>
struct EncoderResult {
  ag::Var<T> features;   // {B, C_last, T/4^L} output of the conv stack
  ag::Var<T> embedding;  // {B, embedding_dim}
  std::vector<int64_t> layer_lengths;
};

template <typename T>
EncoderResult<T> encoder_forward(ag::Tape<T>& tape, ParamBinder<T>& p, const EncoderConfig& cfg,
                                 const Tensor<T>& chunks, bool train_mode = true) {
  cfg.validate();
  require(chunks.ndim() == 2, "encoder: expected chunks {B,T}");
  require(chunks.dim(1) == cfg.input_samples,
          "encoder: chunk length " + std::to_string(chunks.dim(1)) + " does not match config " +
              std::to_string(cfg.input_samples));
  require(chunks.all_finite(), "encoder: non-finite input");
  int64_t B = chunks.dim(0);
  T slope = static_cast<T>(cfg.leaky_slope);

  ag::Var<T> x = tape.leaf(chunks.reshaped({B, 1, chunks.dim(1)}), false);
  EncoderResult<T> result;
  for (int i = 0; i < cfg.num_layers; ++i) {
    std::string name = "enc.conv" + std::to_string(i);
    x = ag::conv1d(x, p(name + ".w"), p(name + ".b"), cfg.stride, cfg.padding);
    if (cfg.batchnorm) {
      const Tensor<T>& v = x.value();
      std::string bn = "enc.bn" + std::to_string(i);
      ag::Var<T> x4 = ag::reshape(x, {v.dim(0), v.dim(1), 1, v.dim(2)});
      x4 = ag::batch_norm2d(x4, p(bn + ".gamma"), p(bn + ".beta"), p.state(bn + ".running_mean"),
                            p.state(bn + ".running_var"), train_mode, train_mode, T(0.1),
                            T(1e-5));
      x = ag::reshape(x4, {v.dim(0), v.dim(1), v.dim(2)});
    }
    x = ag::leaky_relu(x, slope);
    result.layer_lengths.push_back(x.value().dim(2));
  }
  result.features = x;

  ag::Var<T> h = ag::reshape(x, {B, cfg.flattened_dim()});
  size_t n_fc = cfg.fc_hidden.size() + 1;
  for (size_t i = 0; i < n_fc; ++i) {
    std::string name = "enc.fc" + std::to_string(i);
    h = ag::linear(h, p(name + ".w"), p(name + ".b"));
    if (i + 1 < n_fc) h = ag::leaky_relu(h, slope);  // final projection stays linear
  }
  result.embedding = h;
  return result;
}

// Dropout stays active regardless of mode; it is the generator's only source
// of output diversity since there is no latent noise input. bn_batch_stats
// selects batch versus running statistics (generation uses running).
template <typename T>
ag::Var<T> generator_forward(ag::Tape<T>& tape, ParamBinder<T>& p, const GeneratorConfig& cfg,
                             ag::Var<T> embedding, uint64_t dropout_seed, bool bn_batch_stats,
                             bool bn_update_running) {
  cfg.validate();
  const Tensor<T>& ev = embedding.value();
  require(ev.ndim() == 2 && ev.dim(1) == cfg.embedding_dim,
          "generator: expected embeddings {B," + std::to_string(cfg.embedding_dim) + "}");
  int64_t B = ev.dim(0);
  const T mom = T(0.1), eps = T(1e-5);

  ag::Var<T> x = ag::reshape(embedding, {B, cfg.embedding_dim, 1, 1});
  x = ag::conv_transpose2d(x, p("gen.proj.w"), p("gen.proj.b"), {1, 1}, {0, 0});
  x = ag::batch_norm2d(x, p("gen.bn0.gamma"), p("gen.bn0.beta"), p.state("gen.bn0.running_mean"),
                       p.state("gen.bn0.running_var"), bn_batch_stats, bn_update_running, mom,
                       eps);
  x = ag::relu(x);
  for (int i = 0; i < cfg.num_upsample; ++i) {
    std::string name = "gen.up" + std::to_string(i);
    x = ag::conv_transpose2d(x, p(name + ".w"), p(name + ".b"), {2, 2}, {1, 1});
    if (i < cfg.num_upsample - 1) {
      std::string bn = "gen.bn" + std::to_string(i + 1);
      x = ag::batch_norm2d(x, p(bn + ".gamma"), p(bn + ".beta"), p.state(bn + ".running_mean"),
                           p.state(bn + ".running_var"), bn_batch_stats, bn_update_running, mom,
                           eps);
      x = ag::relu(x);
      if (i < cfg.dropout_blocks)
        x = ag::dropout(x, cfg.dropout_p, mix_seed(dropout_seed, static_cast<uint64_t>(i)));
    } else {
      x = ag::tanh_op(x);
    }
  }
  require(x.value().dim(2) == cfg.image_size() && x.value().dim(3) == cfg.image_size(),
          "generator: unexpected output size");
  return x;
}

template <typename T>
struct DiscriminatorResult {
  ag::Var<T> scores;  // {B}
  std::vector<std::vector<int64_t>> feature_shapes;
  int64_t concat_channels = 0;
};

// update_u advances the persistent power-iteration state (training only);
// evaluation and gradient checks keep it frozen so the pass is a pure
// function of weights and inputs.
template <typename T>
DiscriminatorResult<T> discriminator_forward(ag::Tape<T>& tape, ParamBinder<T>& p,
                                             const DiscriminatorConfig& cfg, ag::Var<T> images,
                                             ag::Var<T> embeddings, bool update_u) {
  cfg.validate();
  const Tensor<T>& iv = images.value();
  const Tensor<T>& ev = embeddings.value();
  require(iv.ndim() == 4 && iv.dim(2) == cfg.image_size && iv.dim(3) == cfg.image_size,
          "discriminator: expected images {B,3," + std::to_string(cfg.image_size) + "," +
              std::to_string(cfg.image_size) + "}");
  require(ev.ndim() == 2 && ev.dim(1) == cfg.embedding_dim,
          "discriminator: embedding dim mismatch");
  require(iv.dim(0) == ev.dim(0), "discriminator: embedding batch does not match image batch");
  T slope = static_cast<T>(cfg.leaky_slope);

  DiscriminatorResult<T> result;
  ag::Var<T> x = images;
  for (size_t i = 0; i < cfg.channel_plan.size(); ++i) {
    std::string name = "disc.conv" + std::to_string(i);
    ag::Var<T> w = ag::spectral_norm(p(name + ".w"), p.state(name + ".u"), update_u);
    x = ag::conv2d(x, w, p(name + ".b"), {cfg.stride, cfg.stride}, {1, 1});
    x = ag::leaky_relu(x, slope);
    result.feature_shapes.push_back(x.value().shape());
  }
  require(x.value().dim(2) == cfg.embed_spatial && x.value().dim(3) == cfg.embed_spatial,
          "discriminator: feature map did not reach the concatenation size");

  ag::Var<T> tiled = ag::tile_spatial(embeddings, cfg.embed_spatial, cfg.embed_spatial);
  x = ag::concat_channels(x, tiled);
  result.concat_channels = x.value().dim(1);

  ag::Var<T> wf = ag::spectral_norm(p("disc.final.w"), p.state("disc.final.u"), update_u);
  x = ag::conv2d(x, wf, p("disc.final.b"), {1, 1}, {0, 0});  // stride 1 down to {B,1,1,1}
  result.scores = ag::reshape(x, {iv.dim(0)});
  return result;
}

// Single affine layer from the speech embedding to identity logits.
template <typename T>
ag::Var<T> classifier_forward(ag::Tape<T>& tape, ParamBinder<T>& p, int num_identities,
                              ag::Var<T> embeddings) {
  require(num_identities >= 2, "classifier: need at least 2 identities");
  (void)tape;
  return ag::linear(embeddings, p("head.w"), p("head.b"));
}

}  // namespace wav2pix::nets
