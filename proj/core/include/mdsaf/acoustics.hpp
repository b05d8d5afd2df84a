#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mdsaf/dsp.hpp"

namespace mdsaf::acoustics {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

double distance(const Vec3& a, const Vec3& b);

/// Rectangular room with a rigid-wall image model.
struct RoomSpec {
  Vec3 dimensions{5.0, 4.0, 3.0};
  Vec3 source_pos{1.0, 2.0, 1.5};
  Vec3 speaker_pos{3.0, 2.0, 1.5};
  Vec3 error_mic_pos{3.5, 2.0, 1.5};
  double t60 = 0.15;
  double sound_speed = 340.0;
  double sample_rate = 16000.0;
  /// Replaces the Eyring-derived wall reflection coefficient (0 = anechoic).
  std::optional<double> reflection_override;

  void validate() const;
  bool contains(const Vec3& p) const;
};

/// The 9 reference positions: vertices and centre of a cube.
std::array<Vec3, 9> cube_positions(const Vec3& centre = {1.0, 2.0, 1.5}, double edge = 1.0);

/// Uniform pressure reflection coefficient from Eyring's reverberation formula.
double eyring_reflection(const RoomSpec& room);

/// FIR model of an acoustic path.
struct AcousticPath {
  std::vector<double> taps;

  std::size_t length() const { return taps.size(); }
  std::span<const double> view() const { return taps; }
  void validate() const;
};

/// Image-method RIR from `src` to `mic`. Each image contributes
/// R^reflections / (4 pi r) at sample floor(r / c * fs).
AcousticPath image_method_rir(const RoomSpec& room, const Vec3& src, const Vec3& mic, std::size_t length);

/// Index of the largest-magnitude tap.
std::size_t main_delay(const AcousticPath& path);
/// Unit tap at `delay`.
AcousticPath pure_delay(std::size_t delay);

/// RIR cache: "ANCR", version, length, sample rate (u32 LE) then float64 LE taps.
void write_rir(const std::filesystem::path& path, const AcousticPath& rir, std::uint32_t sample_rate);
AcousticPath read_rir(const std::filesystem::path& path, std::uint32_t* sample_rate = nullptr);

enum class SaturationMode { finite, linear };

struct SaturationSpec {
  double eta = 1.0;
  SaturationMode mode = SaturationMode::linear;

  static SaturationSpec linear() { return {1.0, SaturationMode::linear}; }
  static SaturationSpec finite(double eta) { return {eta, SaturationMode::finite}; }
  void validate() const;
};

/// Largest |y| / eta evaluated exactly; beyond it the output is held.
constexpr double kSaturationRange = 6.0;

/// Loudspeaker model f(y) = int_0^y exp(z^2 / (2 eta^2)) dz.
/// Evaluated from a 1024-entry table of g(u) = exp(-u^2/2) int_0^u exp(t^2/2) dt
/// with cubic Hermite interpolation; g' = 1 - u g is exact.
double saturate(double y, const SaturationSpec& spec);
/// df/dy; zero where the output is held.
double saturate_derivative(double y, const SaturationSpec& spec);
/// Number of clamped evaluations since process start.
std::uint64_t saturation_clamp_count();

/// Normalized integral int_0^u exp(t^2/2) dt from the table, u in [0, 6].
double normalized_saturation_integral(double u);

/// d(n) = (p * x)(n) for a whole sequence, with an optional primary path
/// switch at sample `switch_at`.
std::vector<double> primary_response(std::span<const double> x, const AcousticPath& primary,
                                     const AcousticPath* switched = nullptr, std::size_t switch_at = 0);

/// White Gaussian noise with 10 log10(P_d / P_v) = snr_db. Infinite SNR gives zeros.
std::vector<double> measurement_noise(std::span<const double> d, double snr_db, std::uint64_t seed);

/// Sample-by-sample ANC plant: e(n) = d(n) + s * f[y](n) + v(n).
class Plant {
 public:
  /// `history` reserves reference history for a later, longer primary path.
  Plant(AcousticPath primary, AcousticPath secondary, SaturationSpec saturation, std::size_t history = 0);

  /// Pushes x(n) and f[y(n)] into the histories and returns e(n).
  double step(double x_n, double y_n, double noise_n = 0.0);

  void switch_primary(AcousticPath primary);

  double last_d() const { return last_d_; }
  double last_y_prime() const { return last_y_prime_; }
  const dsp::DelayLine& x_history() const { return x_history_; }
  const AcousticPath& primary() const { return primary_; }
  const AcousticPath& secondary() const { return secondary_; }
  const SaturationSpec& saturation() const { return saturation_; }
  void reset();

 private:
  AcousticPath primary_;
  AcousticPath secondary_;
  SaturationSpec saturation_;
  dsp::DelayLine x_history_;
  dsp::DelayLine f_history_;
  double last_d_ = 0.0;
  double last_y_prime_ = 0.0;
};

/// x_f(n) = (estimate * x)(n) from a reference history.
double filtered_reference(const dsp::DelayLine& x_history, const AcousticPath& estimate);

/// Per-sample record of one simulation run.
struct EpisodeTrace {
  std::vector<double> x;
  std::vector<double> d;
  std::vector<double> y;
  std::vector<double> y_prime;
  std::vector<double> e;
  double sample_rate = 16000.0;

  std::size_t size() const { return e.size(); }
  void reserve(std::size_t n);
  void push(double x_n, double d_n, double y_n, double y_prime_n, double e_n);
};

}  // namespace mdsaf::acoustics
