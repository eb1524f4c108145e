#include <cmath>

#include "wav2pix/check.hpp"
#include "wav2pix/trainer.hpp"

namespace wav2pix::training {

namespace {

// Double-precision loss evaluations on the reduced model with every piece of
// persistent state frozen, so each call is a pure function of the parameters.
struct GradCheckProblem {
  nets::ModelConfig model;
  Tensor<double> chunks;
  Tensor<double> images;
  std::vector<int> labels;
  uint64_t dropout_seed = 0;
  double lambda = 1.0;

  static constexpr int64_t kBatch = 2;

  static GradCheckProblem make(uint64_t seed) {
    GradCheckProblem p;
    p.model = nets::tiny_model_config(3);
    Rng rng(mix_seed(seed, 0x6d01));
    p.chunks = Tensor<double>({kBatch, p.model.encoder.input_samples});
    for (int64_t i = 0; i < p.chunks.numel(); ++i) p.chunks[i] = rng.uniform(-1.0, 1.0);
    int s = p.model.discriminator.image_size;
    p.images = Tensor<double>({kBatch, 3, s, s});
    for (int64_t i = 0; i < p.images.numel(); ++i) p.images[i] = rng.uniform(-1.0, 1.0);
    p.labels = {0, 1};
    p.dropout_seed = mix_seed(seed, 0x6d02);
    return p;
  }

  double d_loss(ParameterSet<double>& params,
                std::map<std::string, Tensor<double>>* grads) const {
    ag::Tape<double> tape;
    ParamBinder<double> bind(tape, params, [&](const std::string& n) {
      return grads != nullptr && n.starts_with("disc.");
    });
    auto enc = nets::encoder_forward(tape, bind, model.encoder, chunks);
    ag::Var<double> fake =
        nets::generator_forward(tape, bind, model.generator, enc.embedding, dropout_seed,
                                /*bn_batch_stats=*/true, /*bn_update_running=*/false);
    ag::Var<double> real = tape.leaf(images, false);
    auto disc_real = nets::discriminator_forward(tape, bind, model.discriminator, real,
                                                 enc.embedding, /*update_u=*/false);
    auto disc_fake = nets::discriminator_forward(tape, bind, model.discriminator, fake,
                                                 enc.embedding, /*update_u=*/false);
    ag::Var<double> loss = ag::lsgan_d(disc_real.scores, disc_fake.scores);
    if (grads) {
      tape.backward(loss);
      *grads = bind.grads();
    }
    return loss.value()[0];
  }

  double g_total(ParameterSet<double>& params,
                 std::map<std::string, Tensor<double>>* grads) const {
    ag::Tape<double> tape;
    ParamBinder<double> bind(tape, params, [&](const std::string& n) {
      return grads != nullptr &&
             (n.starts_with("enc.") || n.starts_with("gen.") || n.starts_with("head."));
    });
    auto enc = nets::encoder_forward(tape, bind, model.encoder, chunks);
    ag::Var<double> fake =
        nets::generator_forward(tape, bind, model.generator, enc.embedding, dropout_seed,
                                /*bn_batch_stats=*/true, /*bn_update_running=*/false);
    auto disc = nets::discriminator_forward(tape, bind, model.discriminator, fake,
                                            enc.embedding, /*update_u=*/false);
    ag::Var<double> g_adv = ag::lsgan_g(disc.scores);
    ag::Var<double> logits =
        nets::classifier_forward(tape, bind, model.num_identities, enc.embedding);
    ag::Var<double> g_id = ag::softmax_cross_entropy(logits, labels);
    ag::Var<double> total = ag::add_scaled(g_adv, g_id, lambda);
    if (grads) {
      tape.backward(total);
      *grads = bind.grads();
    }
    return total.value()[0];
  }
};

struct FlatIndex {
  std::string name;
  int64_t index;
};

std::vector<FlatIndex> draw_entries(const ParameterSet<double>& params,
                                    const std::map<std::string, Tensor<double>>& grads, int count,
                                    Rng& rng) {
  std::vector<std::pair<std::string, int64_t>> sizes;
  int64_t total = 0;
  for (const auto& [name, grad] : grads) {
    sizes.emplace_back(name, grad.numel());
    total += grad.numel();
  }
  require(total > 0, "gradcheck: no gradients to sample");
  std::vector<FlatIndex> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    int64_t flat = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(total)));
    for (const auto& [name, n] : sizes) {
      if (flat < n) {
        out.push_back({name, flat});
        break;
      }
      flat -= n;
    }
  }
  (void)params;
  return out;
}

}  // namespace

GradCheckResult finite_difference_gradcheck(uint64_t seed, double epsilon, int num_samples) {
  require(epsilon > 0.0, "gradcheck: epsilon must be positive");
  require(num_samples >= 2, "gradcheck: need at least 2 samples");

  GradCheckProblem problem = GradCheckProblem::make(seed);
  ParameterSet<double> params = nets::init_parameters<double>(problem.model, seed);

  std::map<std::string, Tensor<double>> d_grads, g_grads;
  problem.d_loss(params, &d_grads);
  problem.g_total(params, &g_grads);

  Rng rng(mix_seed(seed, 0x9c37));
  int half = num_samples / 2;
  std::vector<FlatIndex> d_entries = draw_entries(params, d_grads, half, rng);
  std::vector<FlatIndex> g_entries = draw_entries(params, g_grads, num_samples - half, rng);

  GradCheckResult result;
  auto probe = [&](const FlatIndex& entry, bool is_d_loss,
                   const std::map<std::string, Tensor<double>>& grads) {
    Tensor<double>& value = params.at(entry.name);
    double saved = value[entry.index];
    value[entry.index] = saved + epsilon;
    double plus = is_d_loss ? problem.d_loss(params, nullptr) : problem.g_total(params, nullptr);
    value[entry.index] = saved - epsilon;
    double minus = is_d_loss ? problem.d_loss(params, nullptr) : problem.g_total(params, nullptr);
    value[entry.index] = saved;

    GradCheckSample sample;
    sample.name = entry.name;
    sample.index = entry.index;
    sample.numeric = (plus - minus) / (2.0 * epsilon);
    sample.analytic = grads.at(entry.name)[entry.index];
    sample.rel_error = std::abs(sample.analytic - sample.numeric) /
                       std::max({std::abs(sample.analytic), std::abs(sample.numeric), 1e-8});
    result.max_rel_error = std::max(result.max_rel_error, sample.rel_error);
    result.samples.push_back(std::move(sample));
  };
  for (const FlatIndex& e : d_entries) probe(e, true, d_grads);
  for (const FlatIndex& e : g_entries) probe(e, false, g_grads);
  return result;
}

}  // namespace wav2pix::training
