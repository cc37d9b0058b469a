#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "msn/dsp.hpp"
#include "msn/error.hpp"

namespace msn::dsp {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

std::uint16_t read_u16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xFF));
  out.push_back(char(v >> 8));
}

double decode_sample(const unsigned char* p, std::uint16_t format, std::uint16_t bits) {
  if (format == kFormatFloat) {
    if (bits == 32) {
      std::uint32_t raw = read_u32(p);
      float f;
      std::memcpy(&f, &raw, sizeof f);
      return f;
    }
    std::uint64_t raw = std::uint64_t(read_u32(p)) | std::uint64_t(read_u32(p + 4)) << 32;
    double d;
    std::memcpy(&d, &raw, sizeof d);
    return d;
  }
  switch (bits) {
    case 8:
      return (double(p[0]) - 128.0) / 128.0;
    case 16:
      return double(std::int16_t(read_u16(p))) / 32768.0;
    case 24: {
      std::int32_t v = std::int32_t(p[0] | p[1] << 8 | p[2] << 16);
      if (v & 0x800000) v -= 0x1000000;
      return double(v) / 8388608.0;
    }
    default:
      return double(std::int32_t(read_u32(p))) / 2147483648.0;
  }
}

}  // namespace

AudioClip load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::missing_file, "cannot open wav file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    fail(Errc::malformed_header, "missing RIFF/WAVE signature" + where);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size())
        fail(Errc::malformed_header, "truncated fmt chunk" + where);
      const unsigned char* f = bytes.data() + body;
      format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      bits = read_u16(f + 14);
      if (format == kFormatExtensible) {
        if (size < 40) fail(Errc::malformed_header, "truncated extensible fmt chunk" + where);
        format = read_u16(f + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = std::min<std::size_t>(size, bytes.size() - body);
    }
    pos = body + size + (size & 1);
  }

  if (!have_fmt) fail(Errc::malformed_header, "no fmt chunk" + where);
  if (!data) fail(Errc::malformed_header, "no data chunk" + where);
  if (channels == 0 || rate == 0) fail(Errc::malformed_header, "zero channels or rate" + where);

  const bool pcm_ok = format == kFormatPcm && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
  const bool float_ok = format == kFormatFloat && (bits == 32 || bits == 64);
  if (!pcm_ok && !float_ok)
    fail(Errc::unsupported_encoding, "unsupported wav encoding (format " + std::to_string(format) +
                                         ", " + std::to_string(bits) + " bits)" + where);

  const std::size_t frame_bytes = std::size_t(bits / 8) * channels;
  const std::size_t frames = data_size / frame_bytes;
  if (frames == 0) fail(Errc::malformed_header, "data chunk holds no samples" + where);

  AudioClip clip;
  clip.sample_rate = int(rate);
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c)
      acc += decode_sample(data + i * frame_bytes + c * (bits / 8), format, bits);
    clip.samples[i] = acc / channels;
  }
  return clip;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip, SampleFormat format) {
  require(clip.sample_rate > 0, Errc::invalid_argument, "sample rate must be positive");
  const std::uint16_t bits = format == SampleFormat::pcm16 ? 16 : format == SampleFormat::pcm24 ? 24 : 32;
  const std::uint16_t tag = format == SampleFormat::float32 ? kFormatFloat : kFormatPcm;
  const std::uint32_t data_size = std::uint32_t(clip.size() * (bits / 8));

  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  put_u32(out, 36 + data_size);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, tag);
  put_u16(out, 1);
  put_u32(out, std::uint32_t(clip.sample_rate));
  put_u32(out, std::uint32_t(clip.sample_rate) * (bits / 8));
  put_u16(out, bits / 8);
  put_u16(out, bits);
  out += "data";
  put_u32(out, data_size);

  for (double x : clip.samples) {
    if (format == SampleFormat::float32) {
      const float f = float(x);
      std::uint32_t raw;
      std::memcpy(&raw, &f, sizeof raw);
      put_u32(out, raw);
      continue;
    }
    const double full = std::ldexp(1.0, bits - 1);
    const double scaled = std::clamp(std::round(x * full), -full, full - 1);
    const auto v = std::uint32_t(std::int32_t(scaled));
    for (int b = 0; b < bits / 8; ++b) out.push_back(char((v >> (8 * b)) & 0xFF));
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) fail(Errc::io, "cannot write wav file: " + path.string());
  file.write(out.data(), std::streamsize(out.size()));
  if (!file) fail(Errc::io, "short write to " + path.string());
}

}  // namespace msn::dsp
