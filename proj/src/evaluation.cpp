#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "wav2pix/check.hpp"
#include "wav2pix/evaluation.hpp"
#include "wav2pix/objectives.hpp"
#include "wav2pix/rng.hpp"

namespace wav2pix::evaluation {

double landmark_detection_rate(const std::vector<Tensor<float>>& images,
                               const LandmarkOracle& oracle) {
  require(!images.empty(), "landmark_detection_rate: empty image set");
  int64_t hits = 0;
  for (const Tensor<float>& im : images) {
    auto points = oracle.detect(im);
    if (points && points->size() == 68) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(images.size());
}

double identity_accuracy(const std::vector<Tensor<float>>& images,
                         const std::vector<int>& labels, const IdentityOracle& oracle) {
  require(!images.empty(), "identity_accuracy: empty image set");
  require(images.size() == labels.size(), "identity_accuracy: label/image count mismatch");
  int64_t hits = 0;
  for (size_t i = 0; i < images.size(); ++i)
    if (oracle.classify(images[i]) == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(images.size());
}

namespace {

std::vector<Tensor<float>> per_identity_means(const std::vector<Tensor<float>>& images,
                                              const std::vector<int>& labels, int num_identities) {
  std::vector<Tensor<float>> means;
  std::vector<int64_t> counts(static_cast<size_t>(num_identities), 0);
  for (int k = 0; k < num_identities; ++k) means.emplace_back(images.front().shape());
  for (size_t i = 0; i < images.size(); ++i) {
    int k = labels[i];
    require(images[i].same_shape(images.front()), "per-identity means: image shapes disagree");
    float* acc = means[static_cast<size_t>(k)].data();
    const float* src = images[i].data();
    for (int64_t j = 0; j < images[i].numel(); ++j) acc[j] += src[j];
    ++counts[static_cast<size_t>(k)];
  }
  for (int k = 0; k < num_identities; ++k) {
    require(counts[static_cast<size_t>(k)] > 0,
            "per-identity means: identity " + std::to_string(k) + " has zero samples");
    float inv = 1.0f / static_cast<float>(counts[static_cast<size_t>(k)]);
    float* acc = means[static_cast<size_t>(k)].data();
    for (int64_t j = 0; j < means[static_cast<size_t>(k)].numel(); ++j) acc[j] *= inv;
  }
  return means;
}

int nearest_mean(const std::vector<Tensor<float>>& means, const Tensor<float>& image) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < means.size(); ++k) {
    double d = 0.0;
    const float* a = means[k].data();
    const float* b = image.data();
    for (int64_t j = 0; j < image.numel(); ++j) {
      double diff = static_cast<double>(a[j]) - b[j];
      d += diff * diff;
    }
    if (d < best_d) {  // strict: ties keep the lowest index
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace

double per_identity_separation(const std::vector<Tensor<float>>& images,
                               const std::vector<int>& labels) {
  require(!images.empty() && images.size() == labels.size(),
          "per_identity_separation: need aligned images and labels");
  int num_identities = *std::max_element(labels.begin(), labels.end()) + 1;
  require(num_identities >= 2, "per_identity_separation: need at least 2 identities");
  std::vector<Tensor<float>> means = per_identity_means(images, labels, num_identities);
  int64_t hits = 0;
  for (size_t i = 0; i < images.size(); ++i)
    if (nearest_mean(means, images[i]) == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(images.size());
}

double train_fixture_identity_head(const Tensor<float>& embeddings,
                                   const std::vector<int>& labels, int steps, uint64_t seed) {
  require(embeddings.ndim() == 2, "identity head: expected embeddings {N,D}");
  int64_t n = embeddings.dim(0), dim = embeddings.dim(1);
  require(n >= 2 && static_cast<int64_t>(labels.size()) == n,
          "identity head: need aligned embeddings and labels");
  int num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  require(num_classes >= 2, "identity head: degenerate single-class input");
  require(steps >= 1, "identity head: need at least one step");

  Rng rng(mix_seed(seed, 0x4ead));
  Tensor<float> w({num_classes, dim});
  Tensor<float> b({num_classes});
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<float>(rng.normal(0.0, 0.02));
  Tensor<float> mw(w.shape()), vw(w.shape()), mb(b.shape()), vb(b.shape());

  const double lr = 0.05, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= steps; ++t) {
    ag::Tape<float> tape;
    ag::Var<float> wv = tape.leaf(w, true);
    ag::Var<float> bv = tape.leaf(b, true);
    ag::Var<float> x = tape.leaf(embeddings, false);
    ag::Var<float> logits = ag::linear(x, wv, bv);
    ag::Var<float> ce = ag::softmax_cross_entropy(logits, labels);
    tape.backward(ce);
    auto update = [&](Tensor<float>& param, const Tensor<float>& grad, Tensor<float>& m,
                      Tensor<float>& v) {
      float c1 = 1.0f - static_cast<float>(std::pow(beta1, t));
      float c2 = 1.0f - static_cast<float>(std::pow(beta2, t));
      for (int64_t i = 0; i < param.numel(); ++i) {
        m[i] = static_cast<float>(beta1) * m[i] + (1.0f - static_cast<float>(beta1)) * grad[i];
        v[i] = static_cast<float>(beta2) * v[i] +
               (1.0f - static_cast<float>(beta2)) * grad[i] * grad[i];
        param[i] -= static_cast<float>(lr) * (m[i] / c1) /
                    (std::sqrt(v[i] / c2) + static_cast<float>(eps));
      }
    };
    update(w, tape.grad(wv.id), mw, vw);
    update(b, tape.grad(bv.id), mb, vb);
  }

  int64_t hits = 0;
  for (int64_t i = 0; i < n; ++i) {
    int best = 0;
    float best_v = -std::numeric_limits<float>::infinity();
    for (int k = 0; k < num_classes; ++k) {
      float v = b[k];
      for (int64_t j = 0; j < dim; ++j) v += w[k * dim + j] * embeddings[i * dim + j];
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    if (best == labels[static_cast<size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

namespace {

std::vector<std::array<float, 2>> ellipse_landmarks(int64_t height, int64_t width) {
  std::vector<std::array<float, 2>> pts(68);
  float cx = static_cast<float>(width) / 2.0f, cy = static_cast<float>(height) / 2.0f;
  float rx = 0.35f * static_cast<float>(width), ry = 0.42f * static_cast<float>(height);
  for (int i = 0; i < 68; ++i) {
    double a = 2.0 * std::numbers::pi * i / 68.0;
    pts[static_cast<size_t>(i)] = {cx + rx * static_cast<float>(std::cos(a)),
                                   cy + ry * static_cast<float>(std::sin(a))};
  }
  return pts;
}

}  // namespace

std::optional<std::vector<std::array<float, 2>>> ContrastLandmarkOracle::detect(
    const Tensor<float>& image) const {
  require(image.ndim() == 3 && image.dim(0) == 3, "landmark oracle: expected {3,H,W}");
  double mean = 0.0;
  for (int64_t i = 0; i < image.numel(); ++i) {
    float v = image[i];
    if (!std::isfinite(v) || v < -1.0f || v > 1.0f) return std::nullopt;
    mean += v;
  }
  mean /= static_cast<double>(image.numel());
  double var = 0.0;
  for (int64_t i = 0; i < image.numel(); ++i) {
    double d = static_cast<double>(image[i]) - mean;
    var += d * d;
  }
  if (std::sqrt(var / static_cast<double>(image.numel())) < min_std_) return std::nullopt;
  return ellipse_landmarks(image.dim(1), image.dim(2));
}

std::optional<std::vector<std::array<float, 2>>> ConstantLandmarkOracle::detect(
    const Tensor<float>& image) const {
  if (!detects_) return std::nullopt;
  return ellipse_landmarks(image.dim(1), image.dim(2));
}

NearestMeanIdentityOracle NearestMeanIdentityOracle::fit(const std::vector<Tensor<float>>& images,
                                                         const std::vector<int>& labels) {
  require(!images.empty() && images.size() == labels.size(),
          "nearest-mean oracle: need aligned images and labels");
  int num_identities = *std::max_element(labels.begin(), labels.end()) + 1;
  NearestMeanIdentityOracle oracle;
  oracle.means_ = per_identity_means(images, labels, num_identities);
  return oracle;
}

int NearestMeanIdentityOracle::classify(const Tensor<float>& image) const {
  return nearest_mean(means_, image);
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  nlohmann::json j;
  j["landmark_rate"] = report.landmark_rate;
  j["identity_accuracy"] = report.identity_accuracy;
  j["separation"] = report.separation;
  j["n_images"] = report.n_images;
  j["chunk_ms"] = report.chunk_ms;
  j["image_size"] = report.image_size;
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), "write_report: cannot open " + path.string());
  out << j.dump(2) << '\n';
  require(out.good(), "write_report: write failed for " + path.string());
}

Tensor<float> encode_chunks(ParameterSet<float>& params, const nets::ModelConfig& model,
                            const Tensor<float>& chunks) {
  ag::Tape<float> tape;
  ParamBinder<float> bind(tape, params, [](const std::string&) { return false; });
  auto enc = nets::encoder_forward(tape, bind, model.encoder, chunks, /*train_mode=*/false);
  return enc.embedding.value().clone();
}

Tensor<float> generate_images(ParameterSet<float>& params, const nets::ModelConfig& model,
                              const Tensor<float>& chunks, uint64_t dropout_seed) {
  ag::Tape<float> tape;
  ParamBinder<float> bind(tape, params, [](const std::string&) { return false; });
  auto enc = nets::encoder_forward(tape, bind, model.encoder, chunks, /*train_mode=*/false);
  ag::Var<float> images =
      nets::generator_forward(tape, bind, model.generator, enc.embedding, dropout_seed,
                              /*bn_batch_stats=*/false, /*bn_update_running=*/false);
  return images.value().clone();
}

double classifier_head_accuracy(ParameterSet<float>& params, const nets::ModelConfig& model,
                                const Tensor<float>& chunks, const std::vector<int>& labels) {
  Tensor<float> embeddings = encode_chunks(params, model, chunks);
  int64_t n = embeddings.dim(0), dim = embeddings.dim(1);
  require(static_cast<int64_t>(labels.size()) == n,
          "classifier_head_accuracy: label count mismatch");
  const Tensor<float>& w = params.at("head.w");
  const Tensor<float>& b = params.at("head.b");
  int64_t k_total = w.dim(0);
  int64_t hits = 0;
  for (int64_t i = 0; i < n; ++i) {
    int best = 0;
    float best_v = -std::numeric_limits<float>::infinity();
    for (int64_t k = 0; k < k_total; ++k) {
      float v = b[k];
      for (int64_t j = 0; j < dim; ++j) v += w[k * dim + j] * embeddings[i * dim + j];
      if (v > best_v) {
        best_v = v;
        best = static_cast<int>(k);
      }
    }
    if (best == labels[static_cast<size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace wav2pix::evaluation
