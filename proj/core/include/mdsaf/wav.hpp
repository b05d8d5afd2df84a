#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace mdsaf {

struct WavData {
  int sample_rate = 16000;
  std::vector<double> samples;
};

/// Reads a mono WAV file holding 16-bit PCM or 32-bit float samples.
/// Throws InputError on anything else.
WavData read_wav(const std::filesystem::path& path);

/// Same as read_wav followed by resampling to 16 kHz.
std::vector<double> read_wav_16k(const std::filesystem::path& path);

/// Writes mono 32-bit float WAV.
void write_wav(const std::filesystem::path& path, std::span<const double> samples, int sample_rate);

}  // namespace mdsaf
