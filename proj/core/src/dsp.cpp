#include "mdsaf/dsp.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>

namespace mdsaf::dsp {

FftPlan::FftPlan(std::size_t size) : size_(size) {
  if (!is_power_of_two(size)) {
    throw ConfigError("FFT size must be a power of two, got " + std::to_string(size));
  }
  twiddles_.resize(size / 2);
  for (std::size_t k = 0; k < size / 2; ++k) {
    const double angle = -2.0 * kPi * static_cast<double>(k) / static_cast<double>(size);
    twiddles_[k] = {std::cos(angle), std::sin(angle)};
  }
  bitrev_.resize(size);
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < size) ++bits;
  for (std::size_t i = 0; i < size; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < bits; ++b) {
      if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
    }
    bitrev_[i] = static_cast<std::uint32_t>(r);
  }
}

void FftPlan::transform(std::span<Complex> data, bool inverse) const {
  if (data.size() != size_) throw ConfigError("FFT buffer does not match plan size");
  for (std::size_t i = 0; i < size_; ++i) {
    const std::size_t j = bitrev_[i];
    if (i < j) std::swap(data[i], data[j]);
  }
  auto* a = reinterpret_cast<double*>(data.data());
  for (std::size_t len = 2; len <= size_; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = size_ / len;
    for (std::size_t start = 0; start < size_; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const Complex w = twiddles_[k * stride];
        const double wr = w.real();
        const double wi = inverse ? -w.imag() : w.imag();
        double* u = a + 2 * (start + k);
        double* v = a + 2 * (start + k + half);
        const double vr = v[0] * wr - v[1] * wi;
        const double vi = v[0] * wi + v[1] * wr;
        v[0] = u[0] - vr;
        v[1] = u[1] - vi;
        u[0] += vr;
        u[1] += vi;
      }
    }
  }
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(size_);
    for (auto& z : data) z *= scale;
  }
}

void FftPlan::forward(std::span<Complex> data) const { transform(data, false); }
void FftPlan::inverse(std::span<Complex> data) const { transform(data, true); }

const FftPlan& fft_plan(std::size_t size) {
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<FftPlan>> plans;
  std::lock_guard lock(mutex);
  auto it = plans.find(size);
  if (it == plans.end()) {
    it = plans.emplace(size, std::make_unique<FftPlan>(size)).first;
  }
  return *it->second;
}

ComplexVec fft(std::span<const Complex> x, std::size_t size) {
  if (x.size() > size) throw ConfigError("FFT input longer than transform size");
  const FftPlan& plan = fft_plan(size);
  ComplexVec out(size);
  std::copy(x.begin(), x.end(), out.begin());
  plan.forward(out);
  return out;
}

ComplexVec fft(std::span<const Complex> x) { return fft(x, x.size()); }

ComplexVec ifft(std::span<const Complex> x) {
  const FftPlan& plan = fft_plan(x.size());
  ComplexVec out(x.begin(), x.end());
  plan.inverse(out);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double fir_filter(std::span<const double> h, const DelayLine& history) {
  if (h.size() > history.length()) {
    throw ConfigError("FIR filter longer than the available history");
  }
  return dot(h, history.recent(h.size()));
}

std::vector<double> causal_convolve(std::span<const double> x, std::span<const double> h) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t n = 0; n < x.size(); ++n) {
    const std::size_t taps = std::min(h.size(), n + 1);
    double acc = 0.0;
    for (std::size_t l = 0; l < taps; ++l) acc += h[l] * x[n - l];
    y[n] = acc;
  }
  return y;
}

double bessel_i0(double x) {
  double sum = 1.0;
  double term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * static_cast<double>(k));
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

namespace {

constexpr int kTapsPerPhase = 64;
constexpr double kKaiserBeta = 8.0;

// Phase table: row p holds the kernel for fractional delay p / up, taps at
// input offsets j - (kTapsPerPhase/2 - 1), j in [0, kTapsPerPhase).
std::vector<double> polyphase_table(int up, int down) {
  const double cutoff = std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
  const double half_span = kTapsPerPhase / 2.0;
  const double norm = bessel_i0(kKaiserBeta);
  std::vector<double> table(static_cast<std::size_t>(up) * kTapsPerPhase);
  for (int p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / static_cast<double>(up);
    double gain = 0.0;
    for (int j = 0; j < kTapsPerPhase; ++j) {
      const double offset = static_cast<double>(j - (kTapsPerPhase / 2 - 1));
      const double tau = frac - offset;  // time from tap to output instant
      const double arg = cutoff * tau;
      const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(kPi * arg) / (kPi * arg);
      const double r = tau / half_span;
      const double window = std::abs(r) >= 1.0 ? 0.0 : bessel_i0(kKaiserBeta * std::sqrt(1.0 - r * r)) / norm;
      const double value = cutoff * sinc * window;
      table[static_cast<std::size_t>(p) * kTapsPerPhase + j] = value;
      gain += value;
    }
    // unity DC gain per phase
    for (int j = 0; j < kTapsPerPhase; ++j) table[static_cast<std::size_t>(p) * kTapsPerPhase + j] /= gain;
  }
  return table;
}

}  // namespace

std::vector<double> resample_to_16k(std::span<const double> x, int src_rate) {
  constexpr int kTarget = 16000;
  switch (src_rate) {
    case 8000:
    case 16000:
    case 22050:
    case 44100:
    case 48000:
      break;
    default:
      throw InputError("unsupported sample rate " + std::to_string(src_rate));
  }
  if (src_rate == kTarget) return {x.begin(), x.end()};

  const int g = std::gcd(kTarget, src_rate);
  const int up = kTarget / g;
  const int down = src_rate / g;
  const auto table = polyphase_table(up, down);

  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(x.size()) * kTarget / static_cast<double>(src_rate)));
  std::vector<double> y(out_len, 0.0);
  const auto n_in = static_cast<long long>(x.size());
  for (std::size_t i = 0; i < out_len; ++i) {
    const long long pos = static_cast<long long>(i) * down;
    const long long base = pos / up;
    const int phase = static_cast<int>(pos % up);
    const double* h = table.data() + static_cast<std::size_t>(phase) * kTapsPerPhase;
    double acc = 0.0;
    for (int j = 0; j < kTapsPerPhase; ++j) {
      const long long idx = base + j - (kTapsPerPhase / 2 - 1);
      if (idx >= 0 && idx < n_in) acc += h[j] * x[static_cast<std::size_t>(idx)];
    }
    y[i] = acc;
  }
  return y;
}

}  // namespace mdsaf::dsp
