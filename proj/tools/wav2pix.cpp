// wav2pix command line: dataset preparation, synthetic fixtures, training,
// face generation from a WAV file, evaluation reports and the gradient check.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wav2pix/audio.hpp"
#include "wav2pix/dataset.hpp"
#include "wav2pix/evaluation.hpp"
#include "wav2pix/image.hpp"
#include "wav2pix/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wav2pix;

namespace {

void print_result(const json& j) { std::cout << j.dump() << std::endl; }

int64_t chunk_samples_for_ms(int chunk_ms) {
  require(chunk_ms >= 1, "chunk-ms must be positive");
  return static_cast<int64_t>(chunk_ms) * audio::kTargetRate / 1000;
}

int chunk_ms_of(int64_t chunk_samples) {
  return static_cast<int>(chunk_samples * 1000 / audio::kTargetRate);
}

// Standardized, pre-emphasized, peak-normalized segment ready for chunking.
audio::Waveform preprocess_segment(const fs::path& wav_path) {
  return audio::peak_normalize(audio::pre_emphasis(audio::standardize(audio::load_wav(wav_path))));
}

Tensor<float> chunk_to_row(const audio::SpeechChunk& chunk) {
  Tensor<float> t({1, static_cast<int64_t>(chunk.samples.size())});
  for (size_t i = 0; i < chunk.samples.size(); ++i)
    t[static_cast<int64_t>(i)] = static_cast<float>(chunk.samples[i]);
  return t;
}

struct GenerateArgs {
  std::string checkpoint, audio_path, out;
  uint64_t dropout_seed = 0, seed = 0;
  int chunk_ms = 0;  // 0: use the checkpoint's chunk length
  bool dropout_seed_given = false;
};

int run_generate(const GenerateArgs& args) {
  training::Checkpoint ckpt = training::load_checkpoint(args.checkpoint);
  int64_t raw_len =
      args.chunk_ms > 0 ? chunk_samples_for_ms(args.chunk_ms) : ckpt.config.chunk_samples;
  require(audio::padded_chunk_samples(raw_len) == ckpt.state.model.encoder.input_samples,
          "generate: chunk length (padded to " +
              std::to_string(audio::padded_chunk_samples(raw_len)) +
              ") does not match the checkpoint's encoder input of " +
              std::to_string(ckpt.state.model.encoder.input_samples));

  audio::Waveform segment = preprocess_segment(args.audio_path);
  require(segment.frames() >= raw_len,
          "generate: audio shorter than the required " + std::to_string(raw_len) + " samples");
  int64_t start = (segment.frames() - raw_len) / 2;  // centered window
  audio::Waveform slice;
  slice.channels = 1;
  slice.sample_rate = segment.sample_rate;
  slice.samples.assign(segment.samples.begin() + start, segment.samples.begin() + start + raw_len);
  Tensor<float> chunk = chunk_to_row(audio::fit_chunk_length(slice));

  uint64_t dropout_seed = args.dropout_seed_given ? args.dropout_seed : args.seed;
  Tensor<float> images =
      evaluation::generate_images(ckpt.state.params, ckpt.state.model, chunk, dropout_seed);
  Tensor<float> image = images.reshaped({3, images.dim(2), images.dim(3)});
  img::write_png(args.out, img::tensor_to_image(image));
  print_result(json{{"command", "generate"},
                    {"out", args.out},
                    {"image_size", ckpt.state.model.discriminator.image_size},
                    {"chunk_ms", chunk_ms_of(raw_len)},
                    {"dropout_seed", dropout_seed}});
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint, manifest, out;
  uint64_t seed = 0;
  int images_per_record = 2;
  int chunk_ms = 0;
  std::string landmark_oracle = "contrast";
};

int run_evaluate(const EvaluateArgs& args) {
  training::Checkpoint ckpt = training::load_checkpoint(args.checkpoint);
  data::Manifest manifest = data::load_manifest(args.manifest);
  int64_t raw_len =
      args.chunk_ms > 0 ? chunk_samples_for_ms(args.chunk_ms) : ckpt.config.chunk_samples;
  require(audio::padded_chunk_samples(raw_len) == ckpt.state.model.encoder.input_samples,
          "evaluate: chunk length does not match the checkpoint's encoder input");
  int image_size = ckpt.state.model.discriminator.image_size;

  std::vector<Tensor<float>> real_images, generated;
  std::vector<int> labels;
  std::vector<Tensor<float>> pending_chunks;
  std::vector<uint64_t> pending_id;

  for (size_t r = 0; r < manifest.records.size(); ++r) {
    const data::SampleRecord& rec = manifest.records[r];
    img::Image im = img::read_png(manifest.resolve_image(rec));
    real_images.push_back(
        im.width == image_size && im.height == image_size
            ? img::image_to_tensor(im)
            : img::crop_and_scale_face(im, {0, 0, im.width, im.height}, image_size));
    audio::Waveform segment = preprocess_segment(manifest.resolve_audio(rec));
    for (int j = 0; j < args.images_per_record; ++j) {
      uint64_t stream = static_cast<uint64_t>(r) * 1000 + static_cast<uint64_t>(j);
      int64_t offset =
          audio::chunk_offsets(segment.frames(), 1, raw_len, mix_seed(args.seed, stream))[0];
      audio::Waveform slice;
      slice.channels = 1;
      slice.sample_rate = segment.sample_rate;
      slice.samples.assign(segment.samples.begin() + offset,
                           segment.samples.begin() + offset + raw_len);
      pending_chunks.push_back(chunk_to_row(audio::fit_chunk_length(slice)));
      pending_id.push_back(stream);
      labels.push_back(rec.identity_index);
    }
  }

  // generate in fixed-size batches; dropout masks differ per element anyway
  const int64_t gen_batch = 16;
  int64_t T = ckpt.state.model.encoder.input_samples;
  for (size_t lo = 0; lo < pending_chunks.size(); lo += gen_batch) {
    size_t hi = std::min(pending_chunks.size(), lo + gen_batch);
    Tensor<float> chunks({static_cast<int64_t>(hi - lo), T});
    for (size_t i = lo; i < hi; ++i)
      std::copy(pending_chunks[i].data(), pending_chunks[i].data() + T,
                chunks.data() + static_cast<int64_t>(i - lo) * T);
    Tensor<float> images = evaluation::generate_images(
        ckpt.state.params, ckpt.state.model, chunks, mix_seed(args.seed, 0xd0 + pending_id[lo]));
    int64_t per = images.numel() / images.dim(0);
    for (size_t i = lo; i < hi; ++i) {
      Tensor<float> one({3, image_size, image_size});
      std::copy(images.data() + static_cast<int64_t>(i - lo) * per,
                images.data() + static_cast<int64_t>(i - lo + 1) * per, one.data());
      generated.push_back(std::move(one));
    }
  }

  std::unique_ptr<evaluation::LandmarkOracle> oracle;
  if (args.landmark_oracle == "contrast")
    oracle = std::make_unique<evaluation::ContrastLandmarkOracle>();
  else if (args.landmark_oracle == "always")
    oracle = std::make_unique<evaluation::ConstantLandmarkOracle>(true);
  else if (args.landmark_oracle == "never")
    oracle = std::make_unique<evaluation::ConstantLandmarkOracle>(false);
  else
    require(false, "evaluate: unknown landmark oracle '" + args.landmark_oracle + "'");

  std::vector<int> real_labels;
  for (const data::SampleRecord& rec : manifest.records) real_labels.push_back(rec.identity_index);
  evaluation::NearestMeanIdentityOracle id_oracle =
      evaluation::NearestMeanIdentityOracle::fit(real_images, real_labels);

  evaluation::EvalReport report;
  report.landmark_rate = evaluation::landmark_detection_rate(generated, *oracle);
  report.identity_accuracy = evaluation::identity_accuracy(generated, labels, id_oracle);
  report.separation = evaluation::per_identity_separation(generated, labels);
  report.n_images = static_cast<int64_t>(generated.size());
  report.chunk_ms = chunk_ms_of(raw_len);
  report.image_size = image_size;
  evaluation::write_report(args.out, report);
  print_result(json{{"command", "evaluate"},
                    {"out", args.out},
                    {"landmark_rate", report.landmark_rate},
                    {"identity_accuracy", report.identity_accuracy},
                    {"separation", report.separation},
                    {"n_images", report.n_images}});
  return 0;
}

struct PrepareArgs {
  std::string input, out;
  int image_size = 64;
  double duration = 4.0;
};

int run_prepare(const PrepareArgs& args) {
  require(fs::is_directory(args.input), "prepare: input directory not found: " + args.input);
  fs::create_directories(fs::path(args.out) / "audio");
  fs::create_directories(fs::path(args.out) / "images");
  require(fs::is_directory(fs::path(args.out) / "audio"),
          "prepare: cannot create output directory " + args.out);

  std::vector<fs::path> identity_dirs;
  for (const auto& entry : fs::directory_iterator(args.input))
    if (entry.is_directory()) identity_dirs.push_back(entry.path());
  std::sort(identity_dirs.begin(), identity_dirs.end());
  require(!identity_dirs.empty(), "prepare: no identity subdirectories in " + args.input);

  data::Manifest manifest;
  manifest.base_dir = args.out;
  manifest.image_size = args.image_size;
  int skipped = 0;

  for (size_t k = 0; k < identity_dirs.size(); ++k) {
    std::string identity = identity_dirs[k].filename().string();
    manifest.identities.push_back(identity);
    std::vector<fs::path> wavs;
    for (const auto& entry : fs::directory_iterator(identity_dirs[k]))
      if (entry.path().extension() == ".wav") wavs.push_back(entry.path());
    std::sort(wavs.begin(), wavs.end());

    int64_t frame_index = 0;
    for (const fs::path& wav : wavs) {
      fs::path png = wav;
      png.replace_extension(".png");
      if (!fs::exists(png)) continue;

      // detections sidecar: [{"bbox":[x,y,w,h],"confidence":c},...] with an
      // optional top-level {"center_time": seconds, "detections": [...]}
      img::Image frame = img::read_png(png);
      std::vector<data::Detection> detections;
      std::optional<double> center_time;
      fs::path djson = wav;
      djson.replace_extension(".json");
      if (fs::exists(djson)) {
        std::ifstream in(djson);
        json j = json::parse(in);
        const json& list = j.is_array() ? j : j.at("detections");
        if (!j.is_array() && j.contains("center_time"))
          center_time = j.at("center_time").get<double>();
        for (const json& d : list) {
          const auto& b = d.at("bbox");
          detections.push_back({{b[0].get<int64_t>(), b[1].get<int64_t>(), b[2].get<int64_t>(),
                                 b[3].get<int64_t>()},
                                d.at("confidence").get<double>()});
        }
      } else {
        detections.push_back({{0, 0, frame.width, frame.height}, 1.0});  // full-frame fallback
      }
      std::optional<data::Detection> best = data::select_best_detection(detections);
      if (!best) {
        ++skipped;
        continue;
      }

      audio::Waveform standardized = audio::standardize(audio::load_wav(wav));
      double center = center_time.value_or(standardized.duration_seconds() / 2.0);
      audio::Waveform segment =
          audio::extract_context_window(standardized, center, args.duration);

      Tensor<float> face = img::crop_and_scale_face(frame, best->bbox, args.image_size);

      std::string stem = identity + "_" + std::to_string(frame_index);
      std::string audio_rel = "audio/" + stem + ".wav";
      std::string image_rel = "images/" + stem + ".png";
      audio::save_wav_pcm16(fs::path(args.out) / audio_rel, segment);
      img::write_png(fs::path(args.out) / image_rel, img::tensor_to_image(face));

      data::SampleRecord rec;
      rec.identity = identity;
      rec.identity_index = static_cast<int>(k);
      rec.audio_path = audio_rel;
      rec.image_path = image_rel;
      rec.bbox = {std::clamp<int64_t>(best->bbox.x, 0, frame.width),
                  std::clamp<int64_t>(best->bbox.y, 0, frame.height),
                  std::min<int64_t>(best->bbox.w, frame.width),
                  std::min<int64_t>(best->bbox.h, frame.height)};
      rec.frame_index = frame_index++;
      manifest.records.push_back(std::move(rec));
    }
  }
  require(!manifest.records.empty(), "prepare: no usable WAV/PNG pairs found");
  fs::path manifest_path = fs::path(args.out) / "manifest.jsonl";
  data::save_manifest(manifest, manifest_path);
  print_result(json{{"command", "prepare"},
                    {"manifest", manifest_path.string()},
                    {"records", manifest.records.size()},
                    {"identities", manifest.identities.size()},
                    {"skipped_frames", skipped}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wav2pix: speech-conditioned face synthesis"};
  app.require_subcommand(1);

  // synth-fixture
  auto* fixture = app.add_subcommand("synth-fixture", "Generate the synthetic audio/image fixture");
  std::string fx_out;
  int fx_identities = 4, fx_per = 8, fx_size = 64;
  uint64_t fx_seed = 0;
  fixture->add_option("--out", fx_out, "Output directory")->required();
  fixture->add_option("--identities", fx_identities, "Number of identities");
  fixture->add_option("--per-identity", fx_per, "Records per identity");
  fixture->add_option("--image-size", fx_size, "Face size (64 or 128)");
  fixture->add_option("--seed", fx_seed, "Random seed");

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Build a manifest from WAV/PNG pairs");
  PrepareArgs prep;
  uint64_t prep_seed = 0;
  prepare->add_option("--input", prep.input, "Directory with <identity>/<stem>.{wav,png,json}")
      ->required();
  prepare->add_option("--out", prep.out, "Output dataset directory")->required();
  prepare->add_option("--image-size", prep.image_size, "Face crop size (64 or 128)");
  prepare->add_option("--duration", prep.duration, "Speech segment length in seconds");
  prepare->add_option("--seed", prep_seed, "Random seed (unused, accepted for uniformity)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train on a manifest");
  std::string tr_config, tr_manifest, tr_out, tr_resume;
  bool tr_fixed_aug = false;
  uint64_t tr_seed = 0;
  bool tr_seed_given = false;
  train_cmd->add_option("--config", tr_config, "TrainConfig JSON file")->required();
  train_cmd->add_option("--manifest", tr_manifest, "Manifest JSONL")->required();
  train_cmd->add_option("--out", tr_out, "Output directory")->required();
  train_cmd->add_option("--resume", tr_resume, "Checkpoint to resume from");
  train_cmd->add_flag("--fixed-augmentation", tr_fixed_aug,
                      "Freeze the five chunk draws per image instead of resampling each cycle");
  train_cmd->add_option("--seed", tr_seed, "Override the config seed")
      ->each([&](const std::string&) { tr_seed_given = true; });
  int64_t tr_max_steps = 0;
  bool tr_max_steps_given = false;
  train_cmd->add_option("--max-steps", tr_max_steps, "Override max_steps")
      ->each([&](const std::string&) { tr_max_steps_given = true; });

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "Synthesize a face from a WAV file");
  GenerateArgs gen;
  gen_cmd->add_option("--checkpoint", gen.checkpoint, "Checkpoint file")->required();
  gen_cmd->add_option("--audio", gen.audio_path, "Input WAV")->required();
  gen_cmd->add_option("--out", gen.out, "Output PNG")->required();
  gen_cmd->add_option("--dropout-seed", gen.dropout_seed, "Seed for inference-time dropout")
      ->each([&](const std::string&) { gen.dropout_seed_given = true; });
  gen_cmd->add_option("--chunk-ms", gen.chunk_ms, "Chunk length in ms (300/700/1000)");
  gen_cmd->add_option("--seed", gen.seed, "Random seed");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluation report for a checkpoint");
  EvaluateArgs ev;
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--manifest", ev.manifest, "Manifest JSONL")->required();
  eval_cmd->add_option("--out", ev.out, "Report JSON path")->required();
  eval_cmd->add_option("--images-per-record", ev.images_per_record, "Generated images per record");
  eval_cmd->add_option("--chunk-ms", ev.chunk_ms, "Chunk length in ms");
  eval_cmd->add_option("--landmark-oracle", ev.landmark_oracle, "contrast|always|never");
  eval_cmd->add_option("--seed", ev.seed, "Random seed");

  // gradcheck
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  uint64_t gc_seed = 0;
  double gc_eps = 1e-4;
  int gc_samples = 120;
  gc_cmd->add_option("--seed", gc_seed, "Random seed");
  gc_cmd->add_option("--epsilon", gc_eps, "Central-difference step");
  gc_cmd->add_option("--samples", gc_samples, "Number of sampled parameters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << std::endl;
    return 2;
  }

  try {
    if (fixture->parsed()) {
      data::Manifest m = data::make_synthetic_fixture(fx_identities, fx_per, fx_out, fx_seed,
                                                      fx_size);
      print_result(json{{"command", "synth-fixture"},
                        {"manifest", (fs::path(fx_out) / "manifest.jsonl").string()},
                        {"records", m.records.size()},
                        {"identities", m.identities.size()}});
      return 0;
    }
    if (prepare->parsed()) return run_prepare(prep);
    if (train_cmd->parsed()) {
      training::TrainConfig cfg = training::load_train_config(tr_config);
      if (tr_seed_given) cfg.seed = tr_seed;
      if (tr_max_steps_given) cfg.max_steps = tr_max_steps;
      data::Manifest manifest = data::load_manifest(tr_manifest);
      std::optional<fs::path> resume;
      if (!tr_resume.empty()) resume = tr_resume;
      fs::path ckpt = training::train(cfg, manifest, tr_out, resume, tr_fixed_aug);
      print_result(json{{"command", "train"},
                        {"checkpoint", ckpt.string()},
                        {"metrics_csv", (fs::path(tr_out) / "metrics.csv").string()},
                        {"steps", cfg.max_steps}});
      return 0;
    }
    if (gen_cmd->parsed()) return run_generate(gen);
    if (eval_cmd->parsed()) return run_evaluate(ev);
    if (gc_cmd->parsed()) {
      training::GradCheckResult res =
          training::finite_difference_gradcheck(gc_seed, gc_eps, gc_samples);
      print_result(json{{"command", "gradcheck"},
                        {"max_rel_error", res.max_rel_error},
                        {"samples", res.samples.size()}});
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 2;
}
