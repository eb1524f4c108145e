#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "wav2pix/audio.hpp"
#include "wav2pix/check.hpp"

namespace wav2pix::audio {

namespace {

uint32_t read_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

uint16_t read_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | p[1] << 8);
}

void put_u32(std::string& s, uint32_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

Waveform load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "load_wav: cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  require(bytes.size() >= 12, "load_wav: not a RIFF file: " + path.string());
  require(std::memcmp(bytes.data(), "RIFF", 4) == 0 && std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
          "load_wav: not a RIFF/WAVE file: " + path.string());

  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const uint8_t* data = nullptr;
  uint32_t data_size = 0;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const uint8_t* hdr = bytes.data() + pos;
    uint32_t size = read_u32(hdr + 4);
    size_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      require(size >= 16 && body + 16 <= bytes.size(), "load_wav: truncated fmt chunk");
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      require(body + size <= bytes.size(), "load_wav: truncated data chunk");
      data = bytes.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1);  // chunks are padded to even offsets
  }

  require(have_fmt, "load_wav: missing fmt chunk: " + path.string());
  require(format == 1 && bits == 16,
          "load_wav: only PCM16 encoding is supported: " + path.string());
  require(channels >= 1 && rate > 0, "load_wav: invalid fmt fields: " + path.string());
  require(data != nullptr && data_size >= 2, "load_wav: zero-length audio: " + path.string());

  int64_t n = data_size / 2;
  n -= n % channels;
  require(n > 0, "load_wav: zero-length audio: " + path.string());

  Waveform w;
  w.channels = channels;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int16_t v = static_cast<int16_t>(data[2 * i] | (data[2 * i + 1] << 8));
    w.samples[static_cast<size_t>(i)] = static_cast<double>(v) / 32768.0;
  }
  return w;
}

void save_wav_pcm16(const std::filesystem::path& path, const Waveform& w) {
  require(w.channels >= 1 && w.sample_rate > 0, "save_wav: invalid waveform");
  require(!w.samples.empty(), "save_wav: empty waveform");
  uint32_t data_size = static_cast<uint32_t>(w.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_size);
  out.append("RIFF");
  put_u32(out, 36 + data_size);
  out.append("WAVE");
  out.append("fmt ");
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, static_cast<uint16_t>(w.channels));
  put_u32(out, static_cast<uint32_t>(w.sample_rate));
  put_u32(out, static_cast<uint32_t>(w.sample_rate * w.channels * 2));
  put_u16(out, static_cast<uint16_t>(w.channels * 2));
  put_u16(out, 16);
  out.append("data");
  put_u32(out, data_size);
  for (double v : w.samples) {
    double scaled = std::round(v * 32768.0);
    int32_t q = static_cast<int32_t>(std::clamp(scaled, -32768.0, 32767.0));
    put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "save_wav: cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(f.good(), "save_wav: write failed for " + path.string());
}

}  // namespace wav2pix::audio
