#include "mdsaf/wav.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "mdsaf/dsp.hpp"
#include "mdsaf/error.hpp"

namespace mdsaf {
namespace {

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

void put_u16(std::ofstream& out, std::uint16_t v) {
  const char bytes[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(bytes, 2);
}

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open WAV file " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw InputError("not a RIFF/WAVE file: " + path.string());
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw InputError("truncated WAV chunk in " + path.string());
    if (std::memcmp(chunk, "fmt ", 4) == 0 && size >= 16) {
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      if (format == 0xFFFE && size >= 26) format = read_u16(bytes.data() + body + 24);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1u);
  }
  if (data == nullptr || rate == 0) throw InputError("WAV file lacks fmt or data chunk: " + path.string());
  if (channels != 1) throw InputError("WAV file must be mono: " + path.string());

  WavData wav;
  wav.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    wav.samples.resize(data_size / 2);
    for (std::size_t i = 0; i < wav.samples.size(); ++i) {
      const auto v = static_cast<std::int16_t>(read_u16(data + 2 * i));
      wav.samples[i] = static_cast<double>(v) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    wav.samples.resize(data_size / 4);
    for (std::size_t i = 0; i < wav.samples.size(); ++i) {
      const std::uint32_t raw = read_u32(data + 4 * i);
      float f;
      std::memcpy(&f, &raw, sizeof f);
      wav.samples[i] = static_cast<double>(f);
    }
  } else {
    throw InputError("unsupported WAV encoding (need 16-bit PCM or float32): " + path.string());
  }
  return wav;
}

std::vector<double> read_wav_16k(const std::filesystem::path& path) {
  const WavData wav = read_wav(path);
  return dsp::resample_to_16k(wav.samples, wav.sample_rate);
}

void write_wav(const std::filesystem::path& path, std::span<const double> samples, int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write WAV file " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 4);
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(out, 16);
  put_u16(out, 3);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate) * 4);
  put_u16(out, 4);
  put_u16(out, 32);
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (double s : samples) {
    const auto f = static_cast<float>(s);
    std::uint32_t raw;
    std::memcpy(&raw, &f, sizeof raw);
    put_u32(out, raw);
  }
}

}  // namespace mdsaf
