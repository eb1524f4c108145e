#pragma once

// Adversarial optimization loop: alternating discriminator/generator Adam
// updates with the two-timescale learning rates (1e-4 for G, 4e-4 for D) and
// strict gradient routing -- the discriminator sub-step treats the speech
// embedding and the generated images as constants, the generator sub-step
// back-propagates through the generator, the speech encoder and the identity
// head but never updates the discriminator.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "wav2pix/dataset.hpp"
#include "wav2pix/networks.hpp"
#include "wav2pix/objectives.hpp"
#include "wav2pix/params.hpp"
#include "wav2pix/rng.hpp"

namespace wav2pix::training {

struct TrainConfig {
  double lr_g = 1e-4;
  double lr_d = 4e-4;
  double adam_beta1 = 0.1;  // the paper's "momentum 0.1"
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 16;
  double lambda = 1.0;
  int image_size = 64;
  int64_t chunk_samples = audio::kDefaultChunkSamples;  // raw samples per drawn chunk
  int64_t max_steps = 1000;
  uint64_t seed = 0;
  int64_t checkpoint_every = 500;

  int64_t padded_chunk() const { return audio::padded_chunk_samples(chunk_samples); }
  void validate() const;
};

// JSON mirrors the field names exactly; unknown keys are rejected, missing
// keys take the defaults above.
TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig load_train_config(const std::filesystem::path& path);

struct AdamMoments {
  Tensor<float> m;
  Tensor<float> v;
};

struct TrainState {
  int64_t step = 0;
  nets::ModelConfig model;
  ParameterSet<float> params;
  std::map<std::string, AdamMoments> moments;
  Rng rng;
};

TrainState init_train_state(const TrainConfig& cfg, int num_identities);

// In-place Adam with bias correction; a zero gradient leaves the parameter
// unchanged.
void adam_update(Tensor<float>& param, const Tensor<float>& grad, AdamMoments& mom, double lr,
                 double beta1, double beta2, double eps, int64_t t);

// Discriminator sub-step: embeddings and fakes as constants, Eq-style
// least-squares loss on real/fake scores, Adam on disc.* only. Advances the
// spectral-norm u states once. Returns d_loss.
double discriminator_substep(TrainState& state, const TrainConfig& cfg, const data::Batch& batch,
                             uint64_t dropout_seed);

struct GeneratorSubstepResult {
  double g_adv = 0.0;
  double g_identity = 0.0;
};

// Generator sub-step: recomputes with gradients flowing through encoder,
// generator and identity head; the discriminator participates as a frozen
// scorer. Adam on enc.*, gen.*, head.*.
GeneratorSubstepResult generator_substep(TrainState& state, const TrainConfig& cfg,
                                         const data::Batch& batch, uint64_t dropout_seed);

loss::LossBreakdown train_step(TrainState& state, const TrainConfig& cfg,
                               const data::Batch& batch);

// Runs train_step over the augmented batch stream, appends one metrics row per
// step ("step,d_loss,g_adv,g_identity") and checkpoints periodically. Returns
// the final checkpoint path.
std::filesystem::path train(const TrainConfig& cfg, const data::Manifest& manifest,
                            const std::filesystem::path& out_dir,
                            const std::optional<std::filesystem::path>& resume = std::nullopt,
                            bool fixed_augmentation = false);

// Checkpoint container: magic, JSON metadata header (format version, config,
// step, rng state, array directory), then named little-endian float32 arrays.
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainState state;
  TrainConfig config;
};

void save_checkpoint(const TrainState& state, const TrainConfig& cfg,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Finite-difference gradient check (double precision, reduced model)

struct GradCheckSample {
  std::string name;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::vector<GradCheckSample> samples;
};

// Compares analytic gradients of the discriminator loss and the total
// generator loss against central differences on randomly chosen parameters of
// the reduced model. rel = |a-n| / max(|a|,|n|,1e-8).
GradCheckResult finite_difference_gradcheck(uint64_t seed, double epsilon = 1e-4,
                                            int num_samples = 120);

}  // namespace wav2pix::training
