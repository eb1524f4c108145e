#include <algorithm>
#include <cmath>
#include <numbers>

#include "wav2pix/audio.hpp"
#include "wav2pix/check.hpp"
#include "wav2pix/rng.hpp"

namespace wav2pix::audio {

namespace {

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Band-limited resampling with a Hann-windowed sinc kernel, renormalized over
// the in-bounds taps so a constant signal is preserved out to the edges.
std::vector<double> resample(const std::vector<double>& in, int rate_in, int rate_out) {
  int64_t n_in = static_cast<int64_t>(in.size());
  int64_t n_out = static_cast<int64_t>(
      std::llround(static_cast<double>(n_in) * rate_out / rate_in));
  std::vector<double> out(static_cast<size_t>(n_out));
  const double step = static_cast<double>(rate_in) / rate_out;  // input samples per output
  const double cutoff = std::min(1.0, static_cast<double>(rate_out) / rate_in);
  const int zero_crossings = 16;
  const double radius = zero_crossings / cutoff;

  for (int64_t m = 0; m < n_out; ++m) {
    double center = m * step;
    int64_t n0 = static_cast<int64_t>(std::ceil(center - radius));
    int64_t n1 = static_cast<int64_t>(std::floor(center + radius));
    double acc = 0.0, wsum = 0.0;
    for (int64_t n = std::max<int64_t>(n0, 0); n <= std::min(n1, n_in - 1); ++n) {
      double u = static_cast<double>(n) - center;
      double x = cutoff * u;
      double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      double window = 0.5 * (1.0 + std::cos(std::numbers::pi * u / radius));
      double k = cutoff * sinc * window;
      acc += in[static_cast<size_t>(n)] * k;
      wsum += k;
    }
    out[static_cast<size_t>(m)] = wsum > 1e-12 ? acc / wsum : 0.0;
  }
  return out;
}

}  // namespace

Waveform standardize(const Waveform& w) {
  require(w.channels >= 1 && w.sample_rate > 0, "standardize: invalid waveform");
  require(all_finite(w.samples), "standardize: non-finite samples");
  require(!w.samples.empty(), "standardize: empty waveform");

  std::vector<double> mono;
  if (w.channels == 1) {
    mono = w.samples;
  } else {
    int64_t frames = w.frames();
    mono.resize(static_cast<size_t>(frames));
    for (int64_t i = 0; i < frames; ++i) {
      double s = 0.0;
      for (int c = 0; c < w.channels; ++c)
        s += w.samples[static_cast<size_t>(i * w.channels + c)];
      mono[static_cast<size_t>(i)] = s / w.channels;
    }
  }

  Waveform out;
  out.channels = 1;
  out.sample_rate = kTargetRate;
  out.samples = w.sample_rate == kTargetRate ? std::move(mono)
                                             : resample(mono, w.sample_rate, kTargetRate);
  return out;
}

Waveform pre_emphasis(const Waveform& w, double alpha) {
  require(w.channels == 1, "pre_emphasis: expected mono audio");
  require(alpha >= 0.0 && alpha < 1.0, "pre_emphasis: alpha must be in [0,1)");
  Waveform out = w;
  for (size_t t = w.samples.size(); t-- > 1;)
    out.samples[t] = w.samples[t] - alpha * w.samples[t - 1];
  return out;
}

Waveform peak_normalize(const Waveform& w) {
  require(w.channels == 1, "peak_normalize: expected mono audio");
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  require(peak > 0.0, "peak_normalize: all-zero input (silent or defective segment)");
  Waveform out = w;
  for (double& v : out.samples) v /= peak;
  return out;
}

Waveform extract_context_window(const Waveform& w, double center_time, double duration) {
  require(w.channels == 1, "extract_context_window: expected mono audio");
  require(duration > 0.0, "extract_context_window: duration must be positive");
  require(center_time >= 0.0 && center_time <= w.duration_seconds(),
          "extract_context_window: center time outside the audio");
  int64_t n = static_cast<int64_t>(std::llround(duration * w.sample_rate));
  int64_t start = static_cast<int64_t>(std::llround(center_time * w.sample_rate)) - n / 2;
  Waveform out;
  out.channels = 1;
  out.sample_rate = w.sample_rate;
  out.samples.assign(static_cast<size_t>(n), 0.0);
  int64_t total = w.frames();
  for (int64_t i = 0; i < n; ++i) {
    int64_t src = start + i;
    if (src >= 0 && src < total) out.samples[static_cast<size_t>(i)] = w.samples[static_cast<size_t>(src)];
  }
  return out;
}

std::vector<int64_t> chunk_offsets(int64_t segment_len, int n, int64_t chunk_len, uint64_t seed) {
  require(n >= 1, "chunk_offsets: need at least one chunk");
  require(chunk_len >= 1, "chunk_offsets: invalid chunk length");
  require(segment_len >= chunk_len, "chunk_offsets: segment shorter than chunk length");
  Rng rng(mix_seed(seed, 0xc407));
  std::vector<int64_t> offsets(static_cast<size_t>(n));
  for (auto& o : offsets)
    o = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(segment_len - chunk_len + 1)));
  return offsets;
}

std::vector<SpeechChunk> sample_chunks(const Waveform& segment, int n, int64_t chunk_len,
                                       uint64_t seed, int64_t pad_multiple) {
  require(segment.channels == 1, "sample_chunks: expected mono audio");
  std::vector<int64_t> offsets = chunk_offsets(segment.frames(), n, chunk_len, seed);
  std::vector<SpeechChunk> chunks;
  chunks.reserve(offsets.size());
  for (int64_t off : offsets) {
    Waveform slice;
    slice.channels = 1;
    slice.sample_rate = segment.sample_rate;
    slice.samples.assign(segment.samples.begin() + off, segment.samples.begin() + off + chunk_len);
    chunks.push_back(fit_chunk_length(slice, pad_multiple));
  }
  return chunks;
}

SpeechChunk fit_chunk_length(const Waveform& chunk, int64_t target_multiple) {
  require(chunk.channels == 1, "fit_chunk_length: expected mono audio");
  require(!chunk.samples.empty(), "fit_chunk_length: empty input");
  require(target_multiple >= 1, "fit_chunk_length: invalid target multiple");
  for (double v : chunk.samples) {
    require(std::isfinite(v), "fit_chunk_length: non-finite sample");
    require(std::abs(v) <= 1.0, "fit_chunk_length: sample outside [-1,1]");
  }
  int64_t len = static_cast<int64_t>(chunk.samples.size());
  int64_t padded = padded_chunk_samples(len, target_multiple);
  SpeechChunk out;
  out.samples.assign(static_cast<size_t>(padded), 0.0);
  int64_t left = (padded - len) / 2;
  std::copy(chunk.samples.begin(), chunk.samples.end(), out.samples.begin() + left);
  return out;
}

int64_t padded_chunk_samples(int64_t raw_samples, int64_t multiple) {
  require(raw_samples >= 1 && multiple >= 1, "padded_chunk_samples: invalid arguments");
  return (raw_samples + multiple - 1) / multiple * multiple;
}

}  // namespace wav2pix::audio
