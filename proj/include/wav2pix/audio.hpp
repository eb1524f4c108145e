#pragma once

// Deterministic audio preprocessing from stored WAV files to encoder-ready
// speech chunks: mono 16 kHz standardization, pre-emphasis, peak
// normalization, 4-second context windows and seeded 1-second chunk sampling.

#include <cstdint>
#include <filesystem>
#include <vector>

namespace wav2pix::audio {

inline constexpr int kTargetRate = 16000;
inline constexpr int64_t kChunkPadMultiple = 4096;  // 6 stride-4 stages divide evenly
inline constexpr int64_t kDefaultChunkSamples = 16384;

struct Waveform {
  std::vector<double> samples;  // interleaved when channels > 1
  int channels = 1;
  int sample_rate = kTargetRate;

  int64_t frames() const {
    return channels > 0 ? static_cast<int64_t>(samples.size()) / channels : 0;
  }
  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(frames()) / sample_rate : 0.0;
  }
};

// Fixed-length encoder input; length is a positive multiple of 4096 and all
// values lie in [-1, 1].
struct SpeechChunk {
  std::vector<double> samples;
};

// RIFF/WAV PCM16 reader; integer sample v maps to v / 32768.
Waveform load_wav(const std::filesystem::path& path);

// PCM16 writer: values on the k/32768 grid (k in [-32768, 32767]) round-trip
// exactly.
void save_wav_pcm16(const std::filesystem::path& path, const Waveform& w);

// Channel mean to mono, then band-limited resampling to 16 kHz. Output length
// is round(n_in * 16000 / rate_in).
Waveform standardize(const Waveform& w);

// y[0] = x[0]; y[t] = x[t] - alpha * x[t-1].
Waveform pre_emphasis(const Waveform& w, double alpha = 0.95);

// x / max|x|; rejects all-zero input (silent or defective segment).
Waveform peak_normalize(const Waveform& w);

// duration*rate samples centered at center_time, zero-padded past the ends.
Waveform extract_context_window(const Waveform& w, double center_time, double duration = 4.0);

// Start offsets for n uniform chunk draws from [0, len - chunk_len].
std::vector<int64_t> chunk_offsets(int64_t segment_len, int n, int64_t chunk_len, uint64_t seed);

// n contiguous chunk_len slices at seeded uniform offsets, each padded to the
// next multiple of pad_multiple.
std::vector<SpeechChunk> sample_chunks(const Waveform& segment, int n = 5,
                                       int64_t chunk_len = kDefaultChunkSamples,
                                       uint64_t seed = 0,
                                       int64_t pad_multiple = kChunkPadMultiple);

// Symmetric zero-padding up to the next multiple; already-fitting input passes
// through unchanged.
SpeechChunk fit_chunk_length(const Waveform& chunk, int64_t target_multiple = kChunkPadMultiple);

int64_t padded_chunk_samples(int64_t raw_samples, int64_t multiple = kChunkPadMultiple);

}  // namespace wav2pix::audio
