#include "mdsaf/acoustics.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include "mdsaf/error.hpp"
#include "mdsaf/rng.hpp"

namespace mdsaf::acoustics {

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

bool RoomSpec::contains(const Vec3& p) const {
  return p.x > 0.0 && p.x < dimensions.x && p.y > 0.0 && p.y < dimensions.y && p.z > 0.0 &&
         p.z < dimensions.z;
}

void RoomSpec::validate() const {
  if (!(dimensions.x > 0.0 && dimensions.y > 0.0 && dimensions.z > 0.0)) {
    throw InputError("room dimensions must be positive");
  }
  if (!(t60 > 0.0)) throw InputError("t60 must be positive");
  if (!(sound_speed > 0.0)) throw InputError("sound speed must be positive");
  if (!(sample_rate > 0.0)) throw InputError("sample rate must be positive");
  for (const Vec3* p : {&source_pos, &speaker_pos, &error_mic_pos}) {
    if (!contains(*p)) throw InputError("position lies outside the room");
  }
  if (reflection_override && (*reflection_override < 0.0 || *reflection_override >= 1.0)) {
    throw InputError("reflection coefficient must lie in [0, 1)");
  }
}

std::array<Vec3, 9> cube_positions(const Vec3& centre, double edge) {
  std::array<Vec3, 9> out{};
  const double h = edge / 2.0;
  std::size_t i = 0;
  for (int sx : {-1, 1}) {
    for (int sy : {-1, 1}) {
      for (int sz : {-1, 1}) out[i++] = {centre.x + sx * h, centre.y + sy * h, centre.z + sz * h};
    }
  }
  out[8] = centre;
  return out;
}

double eyring_reflection(const RoomSpec& room) {
  if (room.reflection_override) return *room.reflection_override;
  const auto& d = room.dimensions;
  const double volume = d.x * d.y * d.z;
  const double surface = 2.0 * (d.x * d.y + d.x * d.z + d.y * d.z);
  // Eyring: T60 = 24 ln(10) V / (-c S ln(1 - alpha))
  const double alpha =
      1.0 - std::exp(-24.0 * std::log(10.0) * volume / (room.sound_speed * surface * room.t60));
  return std::sqrt(1.0 - alpha);
}

void AcousticPath::validate() const {
  if (taps.empty()) throw InputError("acoustic path must have at least one tap");
  for (double t : taps) {
    if (!std::isfinite(t)) throw InputError("acoustic path has non-finite taps");
  }
}

AcousticPath image_method_rir(const RoomSpec& room, const Vec3& src, const Vec3& mic, std::size_t length) {
  room.validate();
  if (!room.contains(src) || !room.contains(mic)) throw InputError("RIR endpoint lies outside the room");
  const double direct = distance(src, mic);
  if (direct <= 0.0) throw InputError("source and microphone coincide");
  const double samples_per_metre = room.sample_rate / room.sound_speed;
  if (static_cast<double>(length) <= std::floor(direct * samples_per_metre)) {
    throw InputError("RIR length shorter than the direct-path delay");
  }

  const double reflection = eyring_reflection(room);
  const double max_dist = static_cast<double>(length) / samples_per_metre;
  const auto& L = room.dimensions;
  const int nx_max = static_cast<int>(std::ceil(max_dist / (2.0 * L.x))) + 1;
  const int ny_max = static_cast<int>(std::ceil(max_dist / (2.0 * L.y))) + 1;
  const int nz_max = static_cast<int>(std::ceil(max_dist / (2.0 * L.z))) + 1;

  AcousticPath rir;
  rir.taps.assign(length, 0.0);
  const double inv4pi = 1.0 / (4.0 * dsp::kPi);
  for (int nx = -nx_max; nx <= nx_max; ++nx) {
    for (int u = 0; u <= 1; ++u) {
      const double ix = (u ? -src.x : src.x) + 2.0 * nx * L.x;
      const int rx = std::abs(nx - u) + std::abs(nx);
      const double dx = ix - mic.x;
      for (int ny = -ny_max; ny <= ny_max; ++ny) {
        for (int v = 0; v <= 1; ++v) {
          const double iy = (v ? -src.y : src.y) + 2.0 * ny * L.y;
          const int ry = std::abs(ny - v) + std::abs(ny);
          const double dy = iy - mic.y;
          for (int nz = -nz_max; nz <= nz_max; ++nz) {
            for (int w = 0; w <= 1; ++w) {
              const double iz = (w ? -src.z : src.z) + 2.0 * nz * L.z;
              const int rz = std::abs(nz - w) + std::abs(nz);
              const double dz = iz - mic.z;
              const double r = std::sqrt(dx * dx + dy * dy + dz * dz);
              const double delay = std::floor(r * samples_per_metre);
              if (delay >= static_cast<double>(length)) continue;
              const int order = rx + ry + rz;
              const double gain = order == 0 ? 1.0 : (reflection == 0.0 ? 0.0 : std::pow(reflection, order));
              if (gain == 0.0) continue;
              rir.taps[static_cast<std::size_t>(delay)] += gain * inv4pi / r;
            }
          }
        }
      }
    }
  }
  return rir;
}

std::size_t main_delay(const AcousticPath& path) {
  path.validate();
  std::size_t best = 0;
  for (std::size_t i = 1; i < path.taps.size(); ++i) {
    if (std::abs(path.taps[i]) > std::abs(path.taps[best])) best = i;
  }
  return best;
}

AcousticPath pure_delay(std::size_t delay) {
  AcousticPath p;
  p.taps.assign(delay + 1, 0.0);
  p.taps[delay] = 1.0;
  return p;
}

namespace {

constexpr char kRirMagic[4] = {'A', 'N', 'C', 'R'};
constexpr std::uint32_t kRirVersion = 1;

template <typename T>
void put_le(std::ofstream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "RIR I/O assumes a little-endian host");
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T>
T get_le(std::ifstream& in) {
  char bytes[sizeof(T)];
  in.read(bytes, sizeof(T));
  if (!in) throw InputError("truncated RIR file");
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void write_rir(const std::filesystem::path& path, const AcousticPath& rir, std::uint32_t sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write RIR file " + path.string());
  out.write(kRirMagic, 4);
  put_le<std::uint32_t>(out, kRirVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(rir.taps.size()));
  put_le<std::uint32_t>(out, sample_rate);
  for (double t : rir.taps) put_le<double>(out, t);
}

AcousticPath read_rir(const std::filesystem::path& path, std::uint32_t* sample_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open RIR file " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kRirMagic, 4) != 0) throw InputError("bad RIR magic in " + path.string());
  const auto version = get_le<std::uint32_t>(in);
  if (version != kRirVersion) throw InputError("unsupported RIR version " + std::to_string(version));
  const auto length = get_le<std::uint32_t>(in);
  const auto rate = get_le<std::uint32_t>(in);
  AcousticPath rir;
  rir.taps.resize(length);
  for (auto& t : rir.taps) t = get_le<double>(in);
  if (sample_rate) *sample_rate = rate;
  rir.validate();
  return rir;
}

void SaturationSpec::validate() const {
  if (mode == SaturationMode::finite && !(eta > 0.0)) {
    throw ConfigError("finite saturation requires eta > 0");
  }
}

namespace {

double integrand(double t) { return std::exp(0.5 * t * t); }

double simpson(double a, double fa, double b, double fb, double fm) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_simpson(double a, double fa, double b, double fb, double fm, double whole, double tol,
                        int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = integrand(lm), frm = integrand(rm);
  const double left = simpson(a, fa, m, fm, flm);
  const double right = simpson(m, fm, b, fb, frm);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return adaptive_simpson(a, fa, m, fm, flm, left, tol / 2.0, depth - 1) +
         adaptive_simpson(m, fm, b, fb, frm, right, tol / 2.0, depth - 1);
}

double integrate_segment(double a, double b) {
  const double fa = integrand(a), fb = integrand(b), fm = integrand(0.5 * (a + b));
  const double whole = simpson(a, fa, b, fb, fm);
  return adaptive_simpson(a, fa, b, fb, fm, whole, 1e-10 * std::abs(whole), 40);
}

constexpr std::size_t kTableSize = 1024;

// g(u_i) = exp(-u_i^2/2) int_0^{u_i} exp(t^2/2) dt on a uniform grid over [0, 6].
struct SaturationTable {
  double step;
  std::array<double, kTableSize> g;
  std::array<double, kTableSize> dg;

  SaturationTable() : step(kSaturationRange / static_cast<double>(kTableSize - 1)), g{}, dg{} {
    double integral = 0.0;
    for (std::size_t i = 0; i < kTableSize; ++i) {
      const double u = step * static_cast<double>(i);
      if (i > 0) integral += integrate_segment(step * static_cast<double>(i - 1), u);
      g[i] = integral * std::exp(-0.5 * u * u);
      dg[i] = 1.0 - u * g[i];
    }
  }

  double eval(double u) const {
    const double pos = u / step;
    auto i = static_cast<std::size_t>(pos);
    if (i >= kTableSize - 1) i = kTableSize - 2;
    const double t = pos - static_cast<double>(i);
    const double t2 = t * t, t3 = t2 * t;
    const double h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    const double h10 = t3 - 2.0 * t2 + t;
    const double h01 = -2.0 * t3 + 3.0 * t2;
    const double h11 = t3 - t2;
    return h00 * g[i] + h10 * step * dg[i] + h01 * g[i + 1] + h11 * step * dg[i + 1];
  }
};

const SaturationTable& table() {
  static const SaturationTable instance;
  return instance;
}

std::atomic<std::uint64_t> g_clamp_count{0};

}  // namespace

double normalized_saturation_integral(double u) {
  if (u < 0.0 || u > kSaturationRange) throw ConfigError("saturation table argument out of range");
  return table().eval(u) * std::exp(0.5 * u * u);
}

double saturate(double y, const SaturationSpec& spec) {
  if (spec.mode == SaturationMode::linear) return y;
  double u = std::abs(y) / spec.eta;
  if (u > kSaturationRange) {
    g_clamp_count.fetch_add(1, std::memory_order_relaxed);
    u = kSaturationRange;
  }
  const double value = spec.eta * table().eval(u) * std::exp(0.5 * u * u);
  return y < 0.0 ? -value : value;
}

double saturate_derivative(double y, const SaturationSpec& spec) {
  if (spec.mode == SaturationMode::linear) return 1.0;
  const double u = std::abs(y) / spec.eta;
  if (u > kSaturationRange) return 0.0;
  return std::exp(0.5 * u * u);
}

std::uint64_t saturation_clamp_count() { return g_clamp_count.load(std::memory_order_relaxed); }

std::vector<double> primary_response(std::span<const double> x, const AcousticPath& primary,
                                     const AcousticPath* switched, std::size_t switch_at) {
  std::vector<double> d = dsp::causal_convolve(x, primary.taps);
  if (switched != nullptr && switch_at < x.size()) {
    const std::vector<double> d2 = dsp::causal_convolve(x, switched->taps);
    std::copy(d2.begin() + static_cast<std::ptrdiff_t>(switch_at), d2.end(),
              d.begin() + static_cast<std::ptrdiff_t>(switch_at));
  }
  return d;
}

std::vector<double> measurement_noise(std::span<const double> d, double snr_db, std::uint64_t seed) {
  std::vector<double> v(d.size(), 0.0);
  if (std::isinf(snr_db) && snr_db > 0.0) return v;
  if (d.empty()) return v;
  double power = 0.0;
  for (double s : d) power += s * s;
  power /= static_cast<double>(d.size());
  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  SplitMix64 rng(seed, 0x6e6f697365ULL);
  for (auto& s : v) s = sigma * rng.gaussian();
  return v;
}

Plant::Plant(AcousticPath primary, AcousticPath secondary, SaturationSpec saturation, std::size_t history)
    : primary_(std::move(primary)), secondary_(std::move(secondary)), saturation_(saturation) {
  primary_.validate();
  secondary_.validate();
  saturation_.validate();
  x_history_ = dsp::DelayLine(std::max(primary_.length(), history));
  f_history_ = dsp::DelayLine(secondary_.length());
}

double Plant::step(double x_n, double y_n, double noise_n) {
  x_history_.push(x_n);
  f_history_.push(saturate(y_n, saturation_));
  last_d_ = dsp::fir_filter(primary_.taps, x_history_);
  last_y_prime_ = dsp::fir_filter(secondary_.taps, f_history_);
  return last_d_ + last_y_prime_ + noise_n;
}

void Plant::switch_primary(AcousticPath primary) {
  primary.validate();
  if (primary.length() > x_history_.length()) {
    throw ConfigError("switched primary path is longer than the plant's reference history");
  }
  primary_ = std::move(primary);
}

void Plant::reset() {
  x_history_.reset();
  f_history_.reset();
  last_d_ = last_y_prime_ = 0.0;
}

double filtered_reference(const dsp::DelayLine& x_history, const AcousticPath& estimate) {
  return dsp::fir_filter(estimate.taps, x_history);
}

void EpisodeTrace::reserve(std::size_t n) {
  for (auto* v : {&x, &d, &y, &y_prime, &e}) v->reserve(n);
}

void EpisodeTrace::push(double x_n, double d_n, double y_n, double y_prime_n, double e_n) {
  x.push_back(x_n);
  d.push_back(d_n);
  y.push_back(y_n);
  y_prime.push_back(y_prime_n);
  e.push_back(e_n);
}

}  // namespace mdsaf::acoustics
