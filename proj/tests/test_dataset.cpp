#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "test_helpers.hpp"
#include "wav2pix/dataset.hpp"

using namespace wav2pix;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "wav2pix_dataset_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::map<std::string, std::vector<char>> read_tree(const fs::path& root) {
  std::map<std::string, std::vector<char>> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    out[fs::relative(entry.path(), root).string()] =
        std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }
  return out;
}

}  // namespace

TEST_CASE("select_best_detection") {
  data::Detection a{{0, 0, 10, 10}, 0.9};
  data::Detection b{{5, 5, 10, 10}, 0.7};
  auto best = data::select_best_detection({a, b});
  REQUIRE(best.has_value());
  CHECK(best->bbox.x == 0);
  CHECK(best->confidence == 0.9);

  CHECK_FALSE(data::select_best_detection({}).has_value());

  data::Detection tie{{5, 5, 10, 10}, 0.9};
  auto first = data::select_best_detection({a, tie});
  CHECK(first->bbox.x == 0);  // tie goes to the earliest detection
}

TEST_CASE("crop_and_scale_face value mapping and clamping") {
  img::Image frame;
  frame.width = 128;
  frame.height = 128;
  frame.rgb.assign(128 * 128 * 3, 0);
  for (size_t i = 0; i < frame.rgb.size(); i += 3) frame.rgb[i] = 255;  // pure red

  Tensor<float> t = img::crop_and_scale_face(frame, {0, 0, 128, 128}, 64);
  CHECK(t.shape() == std::vector<int64_t>{3, 64, 64});
  CHECK(t[0] == 1.0f);               // 255 -> 1.0
  CHECK(t[64 * 64] == -1.0f);        // 0 -> -1.0
  for (int64_t i = 0; i < t.numel(); ++i) {
    CHECK(t[i] >= -1.0f);
    CHECK(t[i] <= 1.0f);
  }

  // box extending 10 px past the right edge equals the manually clamped crop
  Rng rng(3);
  for (size_t i = 0; i < frame.rgb.size(); ++i)
    frame.rgb[i] = static_cast<uint8_t>(rng.uniform_int(256));
  Tensor<float> over = img::crop_and_scale_face(frame, {64, 10, 74, 100}, 64);
  Tensor<float> clamped = img::crop_and_scale_face(frame, {64, 10, 64, 100}, 64);
  for (int64_t i = 0; i < over.numel(); ++i) CHECK(over[i] == clamped[i]);

  CHECK_THROWS(img::crop_and_scale_face(frame, {200, 200, 50, 50}, 64));
  CHECK_THROWS(img::crop_and_scale_face(frame, {0, 0, 128, 128}, 32));
}

TEST_CASE("bilinear resize against a hand-computed 2x2 -> 4x4 oracle") {
  img::Image src;
  src.width = 2;
  src.height = 2;
  src.rgb = {0, 0, 0, 100, 100, 100, 200, 200, 200, 60, 60, 60};
  img::Image dst = img::bilinear_resize(src, 4, 4);
  // source coordinate for dst x: (x+0.5)*0.5-0.5 -> {-0.25, 0.25, 0.75, 1.25} clamped
  auto px = [&](int y, int x) { return dst.rgb[(static_cast<size_t>(y) * 4 + x) * 3]; };
  CHECK(px(0, 0) == 0);
  CHECK(px(0, 1) == 25);
  CHECK(px(0, 2) == 75);
  CHECK(px(0, 3) == 100);
  CHECK(px(3, 0) == 200);
  CHECK(px(3, 3) == 60);
  CHECK(px(1, 1) == doctest::Approx(0.5625 * 0 + 0.1875 * 100 + 0.1875 * 200 + 0.0625 * 60)
                        .epsilon(0.51));
}

TEST_CASE("synthetic fixture: counts, spectra, determinism") {
  fs::path dir_a = fresh_dir("fixture_a");
  data::Manifest m = data::make_synthetic_fixture(4, 8, dir_a, 5);
  CHECK(m.records.size() == 32);
  CHECK(m.identities.size() == 4);
  CHECK(m.identities[0] == "speaker00");
  CHECK(m.image_size == 64);
  for (const auto& r : m.records) {
    CHECK(fs::exists(m.resolve_audio(r)));
    CHECK(fs::exists(m.resolve_image(r)));
  }

  // identity 0 audio peaks at 200 Hz (+- 1 bin)
  audio::Waveform w = audio::load_wav(m.resolve_audio(m.records.front()));
  CHECK(w.sample_rate == 16000);
  CHECK(w.frames() == 64000);
  size_t fft_size = 65536;
  size_t bin = testutil::spectral_peak_bin(w.samples, fft_size);
  double bin_hz = 16000.0 / static_cast<double>(fft_size);
  size_t expected = static_cast<size_t>(std::llround(200.0 / bin_hz));
  CHECK(bin >= expected - 1);
  CHECK(bin <= expected + 1);

  // byte-identical regeneration with the same seed, different with another
  fs::path dir_b = fresh_dir("fixture_b");
  data::make_synthetic_fixture(4, 8, dir_b, 5);
  CHECK(read_tree(dir_a) == read_tree(dir_b));
  fs::path dir_c = fresh_dir("fixture_c");
  data::make_synthetic_fixture(4, 8, dir_c, 6);
  CHECK(read_tree(dir_a) != read_tree(dir_c));

  CHECK_THROWS(data::make_synthetic_fixture(1, 8, fresh_dir("fixture_bad"), 5));
  CHECK_THROWS(data::make_synthetic_fixture(4, 8, "/proc/definitely/unwritable", 5));
}

TEST_CASE("manifest save/load round-trip and validation") {
  fs::path dir = fresh_dir("manifest");
  data::Manifest m = data::make_synthetic_fixture(3, 2, dir, 9);
  data::Manifest loaded = data::load_manifest(dir / "manifest.jsonl");
  CHECK(loaded.records.size() == m.records.size());
  CHECK(loaded.identities == m.identities);
  CHECK(loaded.image_size == 64);
  for (size_t i = 0; i < m.records.size(); ++i) {
    CHECK(loaded.records[i].identity == m.records[i].identity);
    CHECK(loaded.records[i].identity_index == m.records[i].identity_index);
    CHECK(loaded.records[i].audio_path == m.records[i].audio_path);
    CHECK(loaded.records[i].frame_index == m.records[i].frame_index);
  }

  // record lines carry exactly the documented fields
  std::ifstream in(dir / "manifest.jsonl");
  std::string line;
  REQUIRE(std::getline(in, line));
  nlohmann::json j = nlohmann::json::parse(line);
  std::set<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.insert(k);
  CHECK(keys == std::set<std::string>{"identity", "identity_index", "audio_path", "image_path",
                                      "bbox", "frame_index"});

  // a missing referenced file fails the load
  fs::remove(m.resolve_audio(m.records.front()));
  CHECK_THROWS(data::load_manifest(dir / "manifest.jsonl"));
}

TEST_CASE("split_by_identity") {
  fs::path dir = fresh_dir("split");
  data::Manifest m = data::make_synthetic_fixture(4, 10, dir, 11);

  auto [train, test] = data::split_by_identity(m, 0.8, 3);
  CHECK(train.records.size() == 32);
  CHECK(test.records.size() == 8);
  std::map<int, int> train_counts, test_counts;
  for (const auto& r : train.records) ++train_counts[r.identity_index];
  for (const auto& r : test.records) ++test_counts[r.identity_index];
  for (int k = 0; k < 4; ++k) {
    CHECK(train_counts[k] == 8);
    CHECK(test_counts[k] == 2);
  }

  // same seed reproduces the partition; partition property holds
  auto [train2, test2] = data::split_by_identity(m, 0.8, 3);
  auto key = [](const data::SampleRecord& r) { return r.audio_path; };
  std::set<std::string> a, b, all;
  for (const auto& r : train.records) a.insert(key(r));
  for (const auto& r : train2.records) b.insert(key(r));
  CHECK(a == b);
  for (const auto& r : test.records) {
    CHECK_FALSE(a.contains(key(r)));
    all.insert(key(r));
  }
  for (const auto& r : train.records) all.insert(key(r));
  CHECK(all.size() == m.records.size());

  // an identity with a single record cannot be split
  data::Manifest tiny = m;
  tiny.records.erase(
      std::remove_if(tiny.records.begin(), tiny.records.end(),
                     [](const data::SampleRecord& r) {
                       return r.identity_index == 0 && r.frame_index > 0;
                     }),
      tiny.records.end());
  CHECK_THROWS(data::split_by_identity(tiny, 0.8, 3));
  CHECK_THROWS(data::split_by_identity(m, 0.0, 3));
  CHECK_THROWS(data::split_by_identity(m, 1.0, 3));
}

TEST_CASE("batch iterator: shapes, count, determinism, ranges") {
  fs::path dir = fresh_dir("batches");
  data::Manifest m = data::make_synthetic_fixture(4, 8, dir, 13);

  data::BatchIterator it(m, 4, 16384, 64, 21);
  CHECK(it.batches_per_epoch() == 8);  // 32 records / batch 4
  CHECK(it.padded_chunk() == 16384);

  data::Batch b0 = it.batch(0, 0);
  CHECK(b0.chunks.shape() == std::vector<int64_t>{4, 16384});
  CHECK(b0.images.shape() == std::vector<int64_t>{4, 3, 64, 64});
  CHECK(b0.labels.size() == 4);
  for (int64_t i = 0; i < b0.chunks.numel(); ++i) {
    CHECK(b0.chunks[i] >= -1.0f);
    CHECK(b0.chunks[i] <= 1.0f);
  }
  for (int64_t i = 0; i < b0.images.numel(); ++i) {
    CHECK(b0.images[i] >= -1.0f);
    CHECK(b0.images[i] <= 1.0f);
  }

  // same (seed, epoch) -> identical batch; different epoch -> different plan
  data::BatchIterator it2(m, 4, 16384, 64, 21);
  data::Batch b0b = it2.batch(0, 0);
  bool same = b0.labels == b0b.labels;
  for (int64_t i = 0; same && i < b0.chunks.numel(); ++i)
    same = b0.chunks[i] == b0b.chunks[i];
  CHECK(same);
  auto plan0 = it.epoch_plan(0);
  auto plan1 = it.epoch_plan(1);
  bool plan_differs = false;
  for (size_t i = 0; i < plan0.size(); ++i)
    plan_differs |= plan0[i].record != plan1[i].record ||
                    plan0[i].chunk_offset != plan1[i].chunk_offset;
  CHECK(plan_differs);

  CHECK_THROWS(data::BatchIterator(m, 33, 16384, 64, 21));
  CHECK_THROWS(it.batch(0, 8));
}

TEST_CASE("augmentation cycle serves every image 5 times with fresh offsets") {
  fs::path dir = fresh_dir("augmentation");
  data::Manifest m = data::make_synthetic_fixture(2, 3, dir, 17);
  data::BatchIterator it(m, 2, 16384, 64, 23);

  std::map<int, std::vector<int64_t>> offsets;
  for (int64_t epoch = 0; epoch < data::kAugmentationCopies; ++epoch)
    for (const auto& item : it.epoch_plan(epoch)) offsets[item.record].push_back(item.chunk_offset);
  CHECK(offsets.size() == 6);
  for (const auto& [record, offs] : offsets) {
    CHECK(offs.size() == data::kAugmentationCopies);
    std::set<int64_t> unique(offs.begin(), offs.end());
    CHECK(unique.size() > 1);  // independent draws, not one repeated offset
  }

  // the fixed_augmentation flag reuses the same 5 offsets in every cycle
  data::BatchIterator fixed(m, 2, 16384, 64, 23, true);
  for (int record = 0; record < 6; ++record) {
    std::set<int64_t> cycle1, cycle2;
    for (int64_t epoch = 0; epoch < 5; ++epoch)
      for (const auto& item : fixed.epoch_plan(epoch))
        if (item.record == record) cycle1.insert(item.chunk_offset);
    for (int64_t epoch = 5; epoch < 10; ++epoch)
      for (const auto& item : fixed.epoch_plan(epoch))
        if (item.record == record) cycle2.insert(item.chunk_offset);
    CHECK(cycle1 == cycle2);
  }
}
