#pragma once

// Quantitative protocols against pluggable oracles: landmark-based face
// plausibility (strict all-68 semantics), identity accuracy, and a
// nearest-mean separation metric as the desk-scale identity proxy. Also the
// inference helpers shared by the CLI.

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "wav2pix/networks.hpp"
#include "wav2pix/params.hpp"
#include "wav2pix/tensor.hpp"

namespace wav2pix::evaluation {

// Returns 68 (x,y) points within the image bounds, or nothing when detection
// fails. Real landmark backends plug in behind this interface.
struct LandmarkOracle {
  virtual ~LandmarkOracle() = default;
  virtual std::optional<std::vector<std::array<float, 2>>> detect(
      const Tensor<float>& image) const = 0;
};

struct IdentityOracle {
  virtual ~IdentityOracle() = default;
  virtual int classify(const Tensor<float>& image) const = 0;
};

// Fraction of images for which the oracle returns a full 68-point set.
double landmark_detection_rate(const std::vector<Tensor<float>>& images,
                               const LandmarkOracle& oracle);

// Mean of [classify(image) == label].
double identity_accuracy(const std::vector<Tensor<float>>& images,
                         const std::vector<int>& labels, const IdentityOracle& oracle);

// Per-identity mean images, nearest-mean classification by Euclidean
// distance; ties go to the lowest identity index.
double per_identity_separation(const std::vector<Tensor<float>>& images,
                               const std::vector<int>& labels);

// Trains a fresh affine head on the given embeddings and reports its top-1
// accuracy on the same data.
double train_fixture_identity_head(const Tensor<float>& embeddings,
                                   const std::vector<int>& labels, int steps,
                                   uint64_t seed = 0);

// Deterministic stand-in detector: a fixed 68-point layout when the image has
// at least min_std contrast and stays within [-1,1], nothing otherwise.
class ContrastLandmarkOracle : public LandmarkOracle {
 public:
  explicit ContrastLandmarkOracle(double min_std = 0.05) : min_std_(min_std) {}
  std::optional<std::vector<std::array<float, 2>>> detect(
      const Tensor<float>& image) const override;

 private:
  double min_std_;
};

// Always/never detectors for tests and baselines.
class ConstantLandmarkOracle : public LandmarkOracle {
 public:
  explicit ConstantLandmarkOracle(bool detects) : detects_(detects) {}
  std::optional<std::vector<std::array<float, 2>>> detect(
      const Tensor<float>& image) const override;

 private:
  bool detects_;
};

// Nearest-class-mean classifier fit on reference images.
class NearestMeanIdentityOracle : public IdentityOracle {
 public:
  static NearestMeanIdentityOracle fit(const std::vector<Tensor<float>>& images,
                                       const std::vector<int>& labels);
  int classify(const Tensor<float>& image) const override;

 private:
  std::vector<Tensor<float>> means_;
};

struct EvalReport {
  double landmark_rate = 0.0;
  double identity_accuracy = 0.0;
  double separation = 0.0;
  int64_t n_images = 0;
  int chunk_ms = 0;
  int image_size = 0;
};

// JSON with keys exactly {"landmark_rate","identity_accuracy","separation",
// "n_images","chunk_ms","image_size"}.
void write_report(const std::filesystem::path& path, const EvalReport& report);

// ---------------------------------------------------------------------------
// Inference helpers (running batch-norm statistics, frozen spectral norm)

Tensor<float> encode_chunks(ParameterSet<float>& params, const nets::ModelConfig& model,
                            const Tensor<float>& chunks);

Tensor<float> generate_images(ParameterSet<float>& params, const nets::ModelConfig& model,
                              const Tensor<float>& chunks, uint64_t dropout_seed);

// Top-1 accuracy of the trained identity head on the given chunks.
double classifier_head_accuracy(ParameterSet<float>& params, const nets::ModelConfig& model,
                                const Tensor<float>& chunks, const std::vector<int>& labels);

}  // namespace wav2pix::evaluation
