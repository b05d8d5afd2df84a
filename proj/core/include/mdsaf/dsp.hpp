#pragma once

#include <algorithm>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mdsaf/error.hpp"

namespace mdsaf::dsp {

using Complex = std::complex<double>;
using ComplexVec = std::vector<Complex>;

constexpr double kPi = 3.14159265358979323846;

constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Iterative radix-2 FFT with precomputed twiddles and bit-reversal table.
/// Immutable after construction; safe to share between threads.
class FftPlan {
 public:
  explicit FftPlan(std::size_t size);

  std::size_t size() const { return size_; }

  /// In-place unnormalized forward DFT, X[m] = sum_n x[n] exp(-j 2 pi m n / N).
  void forward(std::span<Complex> data) const;
  /// In-place inverse DFT including the 1/N factor.
  void inverse(std::span<Complex> data) const;

 private:
  void transform(std::span<Complex> data, bool inverse) const;

  std::size_t size_;
  std::vector<Complex> twiddles_;  // exp(-j 2 pi k / N), k < N/2
  std::vector<std::uint32_t> bitrev_;
};

/// Cached plan for `size`. Throws ConfigError for non-power-of-two sizes.
const FftPlan& fft_plan(std::size_t size);

/// Zero-pads `x` to `size` and returns its unnormalized DFT.
ComplexVec fft(std::span<const Complex> x, std::size_t size);
ComplexVec fft(std::span<const Complex> x);
/// Inverse DFT with 1/N normalization; length must be a power of two.
ComplexVec ifft(std::span<const Complex> x);

/// Fixed-length history of a scalar stream. Index 0 is the newest sample and
/// unwritten history reads as zero. Stored twice so the newest `length`
/// samples are always contiguous (newest first).
template <typename T>
class BasicDelayLine {
 public:
  BasicDelayLine() = default;
  explicit BasicDelayLine(std::size_t length)
      : length_(length), buffer_(2 * length, T{}), write_index_(0) {
    if (length == 0) throw ConfigError("delay line length must be positive");
  }

  void push(T sample) {
    write_index_ = write_index_ == 0 ? length_ - 1 : write_index_ - 1;
    buffer_[write_index_] = sample;
    buffer_[write_index_ + length_] = sample;
  }

  const T& operator[](std::size_t lag) const { return buffer_[write_index_ + lag]; }

  /// The newest `count` samples, newest first.
  std::span<const T> recent(std::size_t count) const {
    if (count > length_) throw ConfigError("delay line read beyond its length");
    return {buffer_.data() + write_index_, count};
  }
  std::span<const T> recent() const { return recent(length_); }

  std::size_t length() const { return length_; }
  std::size_t write_index() const { return write_index_; }

  void reset() {
    std::fill(buffer_.begin(), buffer_.end(), T{});
    write_index_ = 0;
  }

 private:
  std::size_t length_ = 0;
  std::vector<T> buffer_;
  std::size_t write_index_ = 0;
};

using DelayLine = BasicDelayLine<double>;
using ComplexDelayLine = BasicDelayLine<Complex>;

/// sum_l h[l] x(n - l) over the history. Throws ConfigError if h is longer
/// than the history.
double fir_filter(std::span<const double> h, const DelayLine& history);

/// Plain dot product, accumulated left to right.
double dot(std::span<const double> a, std::span<const double> b);

/// Causal convolution of `x` with `h`, truncated to x.size() samples.
std::vector<double> causal_convolve(std::span<const double> x, std::span<const double> h);

/// Kaiser-windowed sinc polyphase resampler to 16 kHz.
/// src_rate must be one of 8000, 16000, 22050, 44100, 48000 (InputError otherwise).
std::vector<double> resample_to_16k(std::span<const double> x, int src_rate);

/// Zeroth-order modified Bessel function of the first kind.
double bessel_i0(double x);

}  // namespace mdsaf::dsp
