#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "wav2pix/check.hpp"
#include "wav2pix/trainer.hpp"

namespace wav2pix::training {

using nlohmann::json;

void TrainConfig::validate() const {
  require(lr_g > 0.0 && lr_d > 0.0, "train config: learning rates must be positive");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
          "train config: Adam betas must be in [0,1)");
  require(adam_eps > 0.0, "train config: Adam epsilon must be positive");
  require(batch_size >= 2, "train config: batch size must be at least 2");
  require(lambda >= 0.0, "train config: lambda must be nonnegative");
  require(image_size == 64 || image_size == 128, "train config: image_size must be 64 or 128");
  require(chunk_samples >= 1, "train config: chunk_samples must be positive");
  require(max_steps >= 1, "train config: max_steps must be positive");
  require(checkpoint_every >= 1, "train config: checkpoint_every must be positive");
}

TrainConfig train_config_from_json(const std::string& text) {
  json j = json::parse(text);
  require(j.is_object(), "train config: expected a JSON object");
  TrainConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "lr_g")
      cfg.lr_g = value.get<double>();
    else if (key == "lr_d")
      cfg.lr_d = value.get<double>();
    else if (key == "adam_beta1")
      cfg.adam_beta1 = value.get<double>();
    else if (key == "adam_beta2")
      cfg.adam_beta2 = value.get<double>();
    else if (key == "adam_eps")
      cfg.adam_eps = value.get<double>();
    else if (key == "batch_size")
      cfg.batch_size = value.get<int>();
    else if (key == "lambda")
      cfg.lambda = value.get<double>();
    else if (key == "image_size")
      cfg.image_size = value.get<int>();
    else if (key == "chunk_samples")
      cfg.chunk_samples = value.get<int64_t>();
    else if (key == "max_steps")
      cfg.max_steps = value.get<int64_t>();
    else if (key == "seed")
      cfg.seed = value.get<uint64_t>();
    else if (key == "checkpoint_every")
      cfg.checkpoint_every = value.get<int64_t>();
    else
      require(false, "train config: unknown field '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["lr_g"] = cfg.lr_g;
  j["lr_d"] = cfg.lr_d;
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["batch_size"] = cfg.batch_size;
  j["lambda"] = cfg.lambda;
  j["image_size"] = cfg.image_size;
  j["chunk_samples"] = cfg.chunk_samples;
  j["max_steps"] = cfg.max_steps;
  j["seed"] = cfg.seed;
  j["checkpoint_every"] = cfg.checkpoint_every;
  return j.dump(2);
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "train config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return train_config_from_json(ss.str());
}

TrainState init_train_state(const TrainConfig& cfg, int num_identities) {
  cfg.validate();
  TrainState st;
  st.model = nets::make_model_config(cfg.image_size, static_cast<int>(cfg.padded_chunk()),
                                     num_identities);
  st.params = nets::init_parameters<float>(st.model, cfg.seed);
  for (const auto& [name, entry] : st.params)
    if (entry.trainable)
      st.moments.emplace(name, AdamMoments{Tensor<float>(entry.value.shape()),
                                           Tensor<float>(entry.value.shape())});
  st.rng = Rng(mix_seed(cfg.seed, 0x7261));
  return st;
}

void adam_update(Tensor<float>& param, const Tensor<float>& grad, AdamMoments& mom, double lr,
                 double beta1, double beta2, double eps, int64_t t) {
  require(param.numel() == grad.numel() && param.numel() == mom.m.numel(),
          "adam: shape mismatch");
  require(t >= 1, "adam: step index must be >= 1");
  const float b1 = static_cast<float>(beta1), b2 = static_cast<float>(beta2);
  const float corr1 = 1.0f - static_cast<float>(std::pow(beta1, static_cast<double>(t)));
  const float corr2 = 1.0f - static_cast<float>(std::pow(beta2, static_cast<double>(t)));
  const float step = static_cast<float>(lr);
  const float e = static_cast<float>(eps);
  float* p = param.data();
  const float* g = grad.data();
  float* m = mom.m.data();
  float* v = mom.v.data();
  for (int64_t i = 0; i < param.numel(); ++i) {
    m[i] = b1 * m[i] + (1.0f - b1) * g[i];
    v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
    float mhat = m[i] / corr1;
    float vhat = v[i] / corr2;
    p[i] -= step * mhat / (std::sqrt(vhat) + e);
  }
}

namespace {

void check_batch(const TrainState& st, const data::Batch& batch) {
  require(batch.chunks.ndim() == 2 && batch.images.ndim() == 4, "train: malformed batch");
  require(batch.chunks.dim(0) == batch.images.dim(0) &&
              batch.chunks.dim(0) == static_cast<int64_t>(batch.labels.size()),
          "train: batch sizes disagree");
  require(batch.chunks.dim(1) == st.model.encoder.input_samples,
          "train: chunk length does not match the encoder input");
  require(batch.images.dim(1) == 3 &&
              batch.images.dim(2) == st.model.discriminator.image_size &&
              batch.images.dim(3) == st.model.discriminator.image_size,
          "train: image shape does not match the configured resolution");
}

void check_finite(double v, const char* what, int64_t step) {
  require(std::isfinite(v), std::string("train: non-finite ") + what + " at step " +
                                std::to_string(step + 1) + "; aborting");
}

void apply_grads(TrainState& st, const std::map<std::string, Tensor<float>>& grads, double lr,
                 const TrainConfig& cfg) {
  int64_t t = st.step + 1;
  for (const auto& [name, grad] : grads) {
    auto it = st.moments.find(name);
    require(it != st.moments.end(), "train: gradient for unknown parameter " + name);
    adam_update(st.params.at(name), grad, it->second, lr, cfg.adam_beta1, cfg.adam_beta2,
                cfg.adam_eps, t);
  }
}

}  // namespace

double discriminator_substep(TrainState& st, const TrainConfig& cfg, const data::Batch& batch,
                             uint64_t dropout_seed) {
  check_batch(st, batch);
  int64_t B = batch.chunks.dim(0);

  ag::Tape<float> tape;
  ParamBinder<float> bind(tape, st.params,
                          [](const std::string& n) { return n.starts_with("disc."); });
  // Embedding and fake images are constants here: the encoder and generator
  // leaves are bound without gradients, so no error flows back into them.
  auto enc = nets::encoder_forward(tape, bind, st.model.encoder, batch.chunks);
  ag::Var<float> fake = nets::generator_forward(tape, bind, st.model.generator, enc.embedding,
                                                dropout_seed, /*bn_batch_stats=*/true,
                                                /*bn_update_running=*/false);
  ag::Var<float> real = tape.leaf(batch.images, false);
  ag::Var<float> images2 = ag::concat_rows(real, fake);
  ag::Var<float> emb2 = ag::concat_rows(enc.embedding, enc.embedding);
  auto disc = nets::discriminator_forward(tape, bind, st.model.discriminator, images2, emb2,
                                          /*update_u=*/true);
  ag::Var<float> real_scores = ag::slice_rows(disc.scores, 0, B);
  ag::Var<float> fake_scores = ag::slice_rows(disc.scores, B, B);
  ag::Var<float> d_loss = ag::lsgan_d(real_scores, fake_scores);
  double value = static_cast<double>(d_loss.value()[0]);
  check_finite(value, "discriminator loss", st.step);

  tape.backward(d_loss);
  apply_grads(st, bind.grads(), cfg.lr_d, cfg);
  return value;
}

GeneratorSubstepResult generator_substep(TrainState& st, const TrainConfig& cfg,
                                         const data::Batch& batch, uint64_t dropout_seed) {
  check_batch(st, batch);

  ag::Tape<float> tape;
  ParamBinder<float> bind(tape, st.params, [](const std::string& n) {
    return n.starts_with("enc.") || n.starts_with("gen.") || n.starts_with("head.");
  });
  auto enc = nets::encoder_forward(tape, bind, st.model.encoder, batch.chunks);
  ag::Var<float> fake = nets::generator_forward(tape, bind, st.model.generator, enc.embedding,
                                                dropout_seed, /*bn_batch_stats=*/true,
                                                /*bn_update_running=*/true);
  // The discriminator scores with frozen weights and u state; gradients flow
  // through it into the fake images and the embedding only.
  auto disc = nets::discriminator_forward(tape, bind, st.model.discriminator, fake,
                                          enc.embedding, /*update_u=*/false);
  ag::Var<float> g_adv = ag::lsgan_g(disc.scores);
  ag::Var<float> logits =
      nets::classifier_forward(tape, bind, st.model.num_identities, enc.embedding);
  ag::Var<float> g_identity = ag::softmax_cross_entropy(logits, batch.labels);
  ag::Var<float> g_total = ag::add_scaled(g_adv, g_identity, static_cast<float>(cfg.lambda));

  GeneratorSubstepResult result;
  result.g_adv = static_cast<double>(g_adv.value()[0]);
  result.g_identity = static_cast<double>(g_identity.value()[0]);
  check_finite(result.g_adv, "generator adversarial loss", st.step);
  check_finite(result.g_identity, "identity loss", st.step);

  tape.backward(g_total);
  apply_grads(st, bind.grads(), cfg.lr_g, cfg);
  return result;
}

loss::LossBreakdown train_step(TrainState& st, const TrainConfig& cfg, const data::Batch& batch) {
  uint64_t dropout_seed = st.rng.next_u64();
  loss::LossBreakdown out;
  out.lambda = cfg.lambda;
  out.d_loss = discriminator_substep(st, cfg, batch, dropout_seed);
  GeneratorSubstepResult g = generator_substep(st, cfg, batch, dropout_seed);
  out.g_adv = g.g_adv;
  out.g_identity = g.g_identity;
  out.g_total = loss::generator_total_loss(g.g_adv, g.g_identity, cfg.lambda);
  st.step += 1;
  return out;
}

std::filesystem::path train(const TrainConfig& cfg, const data::Manifest& manifest,
                            const std::filesystem::path& out_dir,
                            const std::optional<std::filesystem::path>& resume,
                            bool fixed_augmentation) {
  cfg.validate();
  require(manifest.num_identities() >= 2, "train: manifest needs at least 2 identities");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(std::filesystem::is_directory(out_dir),
          "train: cannot create output directory " + out_dir.string());

  TrainState st;
  if (resume) {
    Checkpoint ckpt = load_checkpoint(*resume);
    require(ckpt.config.image_size == cfg.image_size &&
                ckpt.config.chunk_samples == cfg.chunk_samples &&
                ckpt.state.model.num_identities == manifest.num_identities(),
            "train: checkpoint does not match the requested configuration");
    st = std::move(ckpt.state);
  } else {
    st = init_train_state(cfg, manifest.num_identities());
  }

  data::BatchIterator iterator(manifest, cfg.batch_size, cfg.chunk_samples, cfg.image_size,
                               cfg.seed, fixed_augmentation);
  int64_t per_epoch = iterator.batches_per_epoch();
  require(per_epoch >= 1, "train: not enough records for one batch");

  std::filesystem::path csv_path = out_dir / "metrics.csv";
  bool append = resume.has_value() && std::filesystem::exists(csv_path);
  std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
  require(csv.good(), "train: cannot open " + csv_path.string());
  if (!append) csv << "step,d_loss,g_adv,g_identity\n";
  csv << std::setprecision(9);

  auto checkpoint_path = [&](int64_t step) {
    std::ostringstream name;
    name << "ckpt-" << std::setw(6) << std::setfill('0') << step << ".w2p";
    return out_dir / name.str();
  };

  int64_t last_saved = -1;
  while (st.step < cfg.max_steps) {
    data::Batch batch = iterator.batch(st.step / per_epoch, st.step % per_epoch);
    loss::LossBreakdown m = train_step(st, cfg, batch);
    csv << st.step << ',' << m.d_loss << ',' << m.g_adv << ',' << m.g_identity << '\n';
    if (st.step % cfg.checkpoint_every == 0 || st.step == cfg.max_steps) {
      save_checkpoint(st, cfg, checkpoint_path(st.step));
      last_saved = st.step;
    }
  }
  csv.flush();
  require(csv.good(), "train: metrics write failed");
  if (last_saved != st.step) save_checkpoint(st, cfg, checkpoint_path(st.step));
  return checkpoint_path(st.step);
}

}  // namespace wav2pix::training
