#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "wav2pix/check.hpp"
#include "wav2pix/dataset.hpp"
#include "wav2pix/rng.hpp"

namespace wav2pix::data {

using nlohmann::json;

std::optional<Detection> select_best_detection(const std::vector<Detection>& detections) {
  std::optional<Detection> best;
  for (const Detection& d : detections) {
    require(std::isfinite(d.confidence), "select_best_detection: non-finite confidence");
    if (!best || d.confidence > best->confidence) best = d;
  }
  return best;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& jsonl_path) {
  std::ofstream out(jsonl_path, std::ios::trunc);
  require(out.good(), "save_manifest: cannot open " + jsonl_path.string());
  for (const SampleRecord& r : manifest.records) {
    json j;
    j["identity"] = r.identity;
    j["identity_index"] = r.identity_index;
    j["audio_path"] = r.audio_path;
    j["image_path"] = r.image_path;
    j["bbox"] = {r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h};
    j["frame_index"] = r.frame_index;
    out << j.dump() << '\n';
  }
  require(out.good(), "save_manifest: write failed for " + jsonl_path.string());
}

Manifest load_manifest(const std::filesystem::path& jsonl_path) {
  std::ifstream in(jsonl_path);
  require(in.good(), "load_manifest: cannot open " + jsonl_path.string());
  Manifest m;
  m.base_dir = jsonl_path.parent_path();

  std::string line;
  int max_index = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    SampleRecord r;
    r.identity = j.at("identity").get<std::string>();
    r.identity_index = j.at("identity_index").get<int>();
    r.audio_path = j.at("audio_path").get<std::string>();
    r.image_path = j.at("image_path").get<std::string>();
    const auto& b = j.at("bbox");
    require(b.is_array() && b.size() == 4, "load_manifest: bbox must be [x,y,w,h]");
    r.bbox = {b[0].get<int64_t>(), b[1].get<int64_t>(), b[2].get<int64_t>(), b[3].get<int64_t>()};
    require(r.bbox.w > 0 && r.bbox.h > 0, "load_manifest: bbox must have positive size");
    r.frame_index = j.at("frame_index").get<int64_t>();
    require(r.identity_index >= 0, "load_manifest: negative identity index");
    max_index = std::max(max_index, r.identity_index);
    m.records.push_back(std::move(r));
  }
  require(!m.records.empty(), "load_manifest: no records in " + jsonl_path.string());

  m.identities.assign(static_cast<size_t>(max_index + 1), "");
  for (const SampleRecord& r : m.records) {
    std::string& slot = m.identities[static_cast<size_t>(r.identity_index)];
    if (slot.empty())
      slot = r.identity;
    else
      require(slot == r.identity, "load_manifest: identity_index " +
                                      std::to_string(r.identity_index) +
                                      " maps to two different identities");
  }
  for (size_t k = 0; k < m.identities.size(); ++k)
    require(!m.identities[k].empty(),
            "load_manifest: identity indices are not dense (missing " + std::to_string(k) + ")");

  for (const SampleRecord& r : m.records) {
    require(std::filesystem::exists(m.resolve_audio(r)),
            "load_manifest: missing audio file " + m.resolve_audio(r).string());
    require(std::filesystem::exists(m.resolve_image(r)),
            "load_manifest: missing image file " + m.resolve_image(r).string());
  }

  img::Image first = img::read_png(m.resolve_image(m.records.front()));
  require(first.width == first.height && (first.width == 64 || first.width == 128),
          "load_manifest: face crops must be 64x64 or 128x128");
  m.image_size = first.width;
  return m;
}

std::pair<Manifest, Manifest> split_by_identity(const Manifest& manifest, double train_fraction,
                                                uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0,
          "split_by_identity: fraction must be in (0,1)");
  require(!manifest.records.empty(), "split_by_identity: empty manifest");

  std::vector<std::vector<int>> by_identity(manifest.identities.size());
  for (size_t i = 0; i < manifest.records.size(); ++i)
    by_identity[static_cast<size_t>(manifest.records[i].identity_index)].push_back(
        static_cast<int>(i));

  std::set<int> train_idx, test_idx;
  for (size_t k = 0; k < by_identity.size(); ++k) {
    std::vector<int>& ids = by_identity[k];
    require(ids.size() >= 2, "split_by_identity: identity '" + manifest.identities[k] +
                                 "' has fewer than 2 records");
    Rng rng(mix_seed(seed, 0x5b17 + k));
    for (size_t i = ids.size(); i > 1; --i)
      std::swap(ids[i - 1], ids[rng.uniform_int(i)]);
    int64_t n = static_cast<int64_t>(ids.size());
    int64_t n_train = std::clamp<int64_t>(
        static_cast<int64_t>(std::llround(train_fraction * static_cast<double>(n))), 1, n - 1);
    for (int64_t i = 0; i < n; ++i)
      (i < n_train ? train_idx : test_idx).insert(ids[static_cast<size_t>(i)]);
  }

  auto build = [&](const std::set<int>& idx) {
    Manifest out;
    out.identities = manifest.identities;
    out.image_size = manifest.image_size;
    out.chunk_samples = manifest.chunk_samples;
    out.base_dir = manifest.base_dir;
    for (int i : idx) out.records.push_back(manifest.records[static_cast<size_t>(i)]);
    return out;
  };
  return {build(train_idx), build(test_idx)};
}

namespace {

// Distinct flat base colors from a hue wheel.
std::array<double, 3> identity_color(int k, int num_identities) {
  double h = 6.0 * k / num_identities;
  double s = 0.75, v = 0.85;
  int sector = static_cast<int>(h) % 6;
  double f = h - std::floor(h);
  double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

uint8_t to_byte(double v01) {
  return static_cast<uint8_t>(std::clamp(std::round(255.0 * v01), 0.0, 255.0));
}

}  // namespace

Manifest make_synthetic_fixture(int num_identities, int per_identity,
                                const std::filesystem::path& out_dir, uint64_t seed,
                                int image_size) {
  require(num_identities >= 2, "make_synthetic_fixture: need at least 2 identities");
  require(per_identity >= 1, "make_synthetic_fixture: need at least 1 record per identity");
  require(image_size == 64 || image_size == 128, "make_synthetic_fixture: image size must be 64 or 128");

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "audio", ec);
  std::filesystem::create_directories(out_dir / "images", ec);
  require(std::filesystem::is_directory(out_dir / "audio") &&
              std::filesystem::is_directory(out_dir / "images"),
          "make_synthetic_fixture: cannot create output directories under " + out_dir.string());

  Manifest manifest;
  manifest.base_dir = out_dir;
  manifest.image_size = image_size;
  int label_width = std::max<int>(2, static_cast<int>(std::to_string(num_identities - 1).size()));
  for (int k = 0; k < num_identities; ++k) {
    std::string label = std::to_string(k);
    manifest.identities.push_back("speaker" + std::string(label_width - label.size(), '0') + label);
  }

  Rng rng(mix_seed(seed, 0xf1c5));
  const int64_t segment_len = 4 * audio::kTargetRate;
  const int s = image_size;

  for (int k = 0; k < num_identities; ++k) {
    double freq = 200.0 * (k + 1);
    std::array<double, 3> base = identity_color(k, num_identities);
    for (int i = 0; i < per_identity; ++i) {
      // audio: sine with random phase plus low-level noise
      double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      audio::Waveform w;
      w.channels = 1;
      w.sample_rate = audio::kTargetRate;
      w.samples.resize(static_cast<size_t>(segment_len));
      for (int64_t t = 0; t < segment_len; ++t) {
        double v = 0.75 * std::sin(2.0 * std::numbers::pi * freq * t / audio::kTargetRate + phase) +
                   rng.normal(0.0, 0.01);
        w.samples[static_cast<size_t>(t)] = std::clamp(v, -1.0, 1.0);
      }

      // image: jittered flat base color with a centered square + stripe pattern
      std::array<double, 3> color = base;
      for (double& c : color) c = std::clamp(c + rng.uniform(-0.05, 0.05), 0.0, 1.0);
      int jx = static_cast<int>(rng.uniform_int(5)) - 2;
      int jy = static_cast<int>(rng.uniform_int(5)) - 2;
      img::Image image;
      image.width = s;
      image.height = s;
      image.rgb.resize(static_cast<size_t>(s) * s * 3);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          std::array<double, 3> px = color;
          bool in_square = std::abs(x - s / 2 - jx) < s / 6 && std::abs(y - s / 2 - jy) < s / 6;
          bool in_stripe = std::abs(y - s / 4 - jy) < s / 16;
          if (in_square)
            for (double& c : px) c *= 0.45;
          else if (in_stripe)
            for (double& c : px) c = std::min(1.0, c + 0.35);
          for (int c = 0; c < 3; ++c)
            image.rgb[(static_cast<size_t>(y) * s + x) * 3 + static_cast<size_t>(c)] =
                to_byte(px[static_cast<size_t>(c)]);
        }

      std::string stem = manifest.identities[static_cast<size_t>(k)] + "_" +
                         (i < 10 ? "00" : i < 100 ? "0" : "") + std::to_string(i);
      std::string audio_rel = "audio/" + stem + ".wav";
      std::string image_rel = "images/" + stem + ".png";
      audio::save_wav_pcm16(out_dir / audio_rel, w);
      img::write_png(out_dir / image_rel, image);

      SampleRecord r;
      r.identity = manifest.identities[static_cast<size_t>(k)];
      r.identity_index = k;
      r.audio_path = audio_rel;
      r.image_path = image_rel;
      r.bbox = {0, 0, s, s};
      r.frame_index = i;
      manifest.records.push_back(std::move(r));
    }
  }
  save_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

BatchIterator::BatchIterator(const Manifest& manifest, int batch_size, int64_t chunk_samples,
                             int image_size, uint64_t seed, bool fixed_augmentation)
    : manifest_(&manifest),
      batch_size_(batch_size),
      chunk_samples_(chunk_samples),
      image_size_(image_size),
      seed_(seed),
      fixed_augmentation_(fixed_augmentation) {
  require(!manifest.records.empty(), "batch_iterator: empty manifest");
  require(batch_size >= 1, "batch_iterator: batch size must be positive");
  require(batch_size <= static_cast<int>(manifest.records.size()),
          "batch_iterator: batch size exceeds record count");
  require(chunk_samples >= 1, "batch_iterator: invalid chunk length");

  segments_.reserve(manifest.records.size());
  images_.reserve(manifest.records.size());
  for (const SampleRecord& r : manifest.records) {
    audio::Waveform segment = audio::peak_normalize(
        audio::pre_emphasis(audio::standardize(audio::load_wav(manifest.resolve_audio(r)))));
    require(segment.frames() >= chunk_samples_,
            "batch_iterator: segment " + r.audio_path + " shorter than the chunk length");
    segments_.push_back(std::move(segment));

    img::Image im = img::read_png(manifest.resolve_image(r));
    if (im.width == image_size_ && im.height == image_size_)
      images_.push_back(img::image_to_tensor(im));
    else
      images_.push_back(img::crop_and_scale_face(im, {0, 0, im.width, im.height}, image_size_));
  }

  if (fixed_augmentation_) {
    fixed_offsets_.resize(manifest.records.size());
    for (size_t r = 0; r < manifest.records.size(); ++r)
      fixed_offsets_[r] = audio::chunk_offsets(segments_[r].frames(), kAugmentationCopies,
                                               chunk_samples_, mix_seed(seed_, 0xaa00 + r));
  }
}

int64_t BatchIterator::batches_per_epoch() const {
  return static_cast<int64_t>(manifest_->records.size()) / batch_size_;
}

std::vector<BatchIterator::PlanItem> BatchIterator::epoch_plan(int64_t epoch) const {
  size_t n = manifest_->records.size();
  std::vector<PlanItem> plan(n);
  for (size_t i = 0; i < n; ++i) plan[i].record = static_cast<int>(i);
  Rng shuffle_rng(mix_seed(seed_, 0x2e0000 + static_cast<uint64_t>(epoch)));
  for (size_t i = n; i > 1; --i)
    std::swap(plan[i - 1], plan[shuffle_rng.uniform_int(i)]);

  if (fixed_augmentation_) {
    for (PlanItem& item : plan)
      item.chunk_offset = fixed_offsets_[static_cast<size_t>(item.record)]
                                        [static_cast<size_t>(epoch % kAugmentationCopies)];
  } else {
    Rng offset_rng(mix_seed(seed_, 0x3f0000 + static_cast<uint64_t>(epoch)));
    for (PlanItem& item : plan) {
      int64_t span = segments_[static_cast<size_t>(item.record)].frames() - chunk_samples_;
      item.chunk_offset =
          static_cast<int64_t>(offset_rng.uniform_int(static_cast<uint64_t>(span + 1)));
    }
  }
  return plan;
}

Batch BatchIterator::batch(int64_t epoch, int64_t index) const {
  require(index >= 0 && index < batches_per_epoch(), "batch_iterator: batch index out of range");
  std::vector<PlanItem> plan = epoch_plan(epoch);
  int64_t padded = padded_chunk();
  Batch out;
  out.chunks = Tensor<float>({batch_size_, padded});
  out.images = Tensor<float>({batch_size_, 3, image_size_, image_size_});
  out.labels.resize(static_cast<size_t>(batch_size_));

  for (int b = 0; b < batch_size_; ++b) {
    const PlanItem& item = plan[static_cast<size_t>(index * batch_size_ + b)];
    const audio::Waveform& seg = segments_[static_cast<size_t>(item.record)];
    audio::Waveform slice;
    slice.channels = 1;
    slice.sample_rate = seg.sample_rate;
    slice.samples.assign(seg.samples.begin() + item.chunk_offset,
                         seg.samples.begin() + item.chunk_offset + chunk_samples_);
    audio::SpeechChunk chunk = audio::fit_chunk_length(slice);
    for (int64_t i = 0; i < padded; ++i)
      out.chunks[b * padded + i] = static_cast<float>(chunk.samples[static_cast<size_t>(i)]);

    const Tensor<float>& im = images_[static_cast<size_t>(item.record)];
    std::copy(im.data(), im.data() + im.numel(), out.images.data() + b * im.numel());
    out.labels[static_cast<size_t>(b)] =
        manifest_->records[static_cast<size_t>(item.record)].identity_index;
  }
  return out;
}

}  // namespace wav2pix::data
