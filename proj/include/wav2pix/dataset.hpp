#pragma once

// Dataset plumbing: JSON-lines manifests pairing face crops with 4-second
// speech segments, identity-stratified splits, a deterministic synthetic
// fixture for desk-scale runs, and the augmented batch stream (one epoch
// serves every image once with a freshly drawn 1-second chunk; five epochs
// form one augmentation cycle).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wav2pix/audio.hpp"
#include "wav2pix/image.hpp"
#include "wav2pix/tensor.hpp"

namespace wav2pix::data {

inline constexpr int kAugmentationCopies = 5;

struct Detection {
  img::BBox bbox;
  double confidence = 0.0;
};

// Highest confidence wins; ties keep the earliest entry. Empty input means
// "skip this frame".
std::optional<Detection> select_best_detection(const std::vector<Detection>& detections);

struct SampleRecord {
  std::string identity;
  int identity_index = 0;
  std::string audio_path;  // relative to the manifest directory
  std::string image_path;
  img::BBox bbox;
  int64_t frame_index = 0;
};

struct Manifest {
  std::vector<SampleRecord> records;
  std::vector<std::string> identities;
  int image_size = 64;
  int64_t chunk_samples = audio::kDefaultChunkSamples;
  std::filesystem::path base_dir;

  int num_identities() const { return static_cast<int>(identities.size()); }
  std::filesystem::path resolve_audio(const SampleRecord& r) const { return base_dir / r.audio_path; }
  std::filesystem::path resolve_image(const SampleRecord& r) const { return base_dir / r.image_path; }
};

// One JSON object per record with fields exactly
// {"identity","identity_index","audio_path","image_path","bbox","frame_index"}.
void save_manifest(const Manifest& manifest, const std::filesystem::path& jsonl_path);

// Rebuilds the identity list from the dense indices, checks every referenced
// file exists and sniffs image_size from the first image.
Manifest load_manifest(const std::filesystem::path& jsonl_path);

// Per-identity stratified split: each identity's records are shuffled by seed
// and divided by the fraction; both sides keep the full identity list.
std::pair<Manifest, Manifest> split_by_identity(const Manifest& manifest, double train_fraction,
                                                uint64_t seed);

// K*n WAV/PNG pairs: identity k speaks a 200*(k+1) Hz sine (sigma=0.01 noise)
// for 4 s at 16 kHz and wears a distinct flat base color with a fixed
// geometric pattern, jittered per sample. Byte-deterministic by seed.
Manifest make_synthetic_fixture(int num_identities, int per_identity,
                                const std::filesystem::path& out_dir, uint64_t seed,
                                int image_size = 64);

struct Batch {
  Tensor<float> chunks;  // {B, padded_chunk}
  Tensor<float> images;  // {B, 3, S, S}
  std::vector<int> labels;
};

class BatchIterator {
 public:
  BatchIterator(const Manifest& manifest, int batch_size, int64_t chunk_samples, int image_size,
                uint64_t seed, bool fixed_augmentation = false);

  int64_t batches_per_epoch() const;
  int64_t padded_chunk() const { return audio::padded_chunk_samples(chunk_samples_); }
  int image_size() const { return image_size_; }

  struct PlanItem {
    int record = 0;
    int64_t chunk_offset = 0;
  };
  // Shuffled record order with this epoch's chunk offsets; batches consume it
  // front to back, dropping the partial tail.
  std::vector<PlanItem> epoch_plan(int64_t epoch) const;

  Batch batch(int64_t epoch, int64_t index) const;

 private:
  const Manifest* manifest_;
  int batch_size_;
  int64_t chunk_samples_;
  int image_size_;
  uint64_t seed_;
  bool fixed_augmentation_;
  std::vector<audio::Waveform> segments_;       // standardized + pre-emphasized + normalized
  std::vector<Tensor<float>> images_;           // {3,S,S}
  std::vector<std::vector<int64_t>> fixed_offsets_;  // per record, kAugmentationCopies draws
};

}  // namespace wav2pix::data
