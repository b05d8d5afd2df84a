#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mdsaf/dsp.hpp"

namespace mdsaf::filterbank {

using dsp::Complex;
using dsp::ComplexVec;

/// Hamming-windowed sinc lowpass of length Q, cutoff pi/K, unity DC gain.
std::vector<double> design_prototype(std::size_t K, std::size_t Q);

/// a_k[q] = c[q] exp(j 2 pi q k / K), k in [0, K).
std::vector<ComplexVec> analysis_coeffs(std::span<const double> c, std::size_t K);

/// Complex-modulated analysis bank with D = K/2 and Q = N/D.
class FilterBank {
 public:
  FilterBank(std::size_t N, std::size_t K);
  /// Uses the given prototype; N = Q * K/2 with Q = prototype length.
  FilterBank(std::vector<double> prototype, std::size_t K);

  std::size_t N() const { return N_; }
  std::size_t K() const { return K_; }
  std::size_t D() const { return D_; }
  std::size_t Q() const { return Q_; }
  std::span<const double> prototype() const { return prototype_; }
  std::span<const Complex> analysis(std::size_t k) const { return analysis_[k]; }

  /// Fullband samples needed by one analysis step.
  std::size_t history_length() const { return Q_ * D_; }
  /// Subbands that carry fullband bins below N/2.
  std::size_t feature_subbands() const { return D_; }
  std::size_t bins_per_subband() const { return Q_ / 2; }
  /// Complex values in one flattened feature frame (x and e halves): N.
  std::size_t feature_size() const { return 2 * D_ * (Q_ / 2); }

  /// FFT-1 map of fullband bin l < N/2: subband floor(l K / N), bin l mod Q.
  std::size_t subband_of(std::size_t l) const { return l * K_ / N_; }
  std::size_t bin_of(std::size_t l) const { return l % Q_; }

 private:
  void init();

  std::size_t N_ = 0;
  std::size_t K_ = 0;
  std::size_t D_ = 0;
  std::size_t Q_ = 0;
  std::vector<double> prototype_;
  std::vector<ComplexVec> analysis_;
};

/// Per-subband outputs of one analysis step, k in [0, K).
struct SubbandSignals {
  ComplexVec x;
  ComplexVec e;
};

/// x_fk(n) = a_k . [x_f(n), x_f(n-D), ..., x_f(n-(Q-1)D)], same for e_k.
SubbandSignals subband_analyze(const FilterBank& bank, const dsp::DelayLine& xf_hist,
                               const dsp::DelayLine& e_hist);

/// sum_q a[q] * s[q], accumulated in q order.
Complex analyze_one(std::span<const Complex> a, std::span<const double> s);

/// Strided samples [h(0), h(D), ..., h((Q-1)D)].
std::vector<double> strided(const dsp::DelayLine& hist, std::size_t D, std::size_t Q);

/// Features for subbands k < D: FFT of each decimated x_fk history and of
/// [0, ..., 0, e_k].
struct SubbandFrame {
  std::vector<ComplexVec> x_ff;
  std::vector<ComplexVec> e_f;
};

/// FFT of a length-Q vector with e_k in the last slot.
ComplexVec error_spectrum(Complex e_k, std::size_t Q);

SubbandFrame subband_features(const FilterBank& bank, std::span<const dsp::ComplexDelayLine> x_hist,
                              std::span<const Complex> e_k);

/// Network input: for each subband k < D, the Q/2 bins the FFT-1 map takes
/// from it, x_ff first then e_f. Length N.
ComplexVec flatten_features(const FilterBank& bank, const SubbandFrame& frame);

/// Bin indices into a subband spectrum selected for subband k.
std::vector<std::size_t> feature_bins(const FilterBank& bank, std::size_t k);

/// Real IFFT of the Hermitian spectrum built from the half spectrum w_s
/// (length N/2): DC takes Re w_s[0], bin N/2 is zero, the upper half mirrors
/// conjugates. Throws InvariantError if the imaginary residue exceeds 1e-12
/// relative to the output peak.
std::vector<double> stack_direct(std::span<const Complex> w_s, std::size_t N);

/// Half spectrum (length N/2) assembled from subband spectra by the FFT-1 map.
ComplexVec fft1_half_spectrum(std::span<const ComplexVec> subband_spectra, const FilterBank& bank);

/// stack_direct(fft1_half_spectrum(...)).
std::vector<double> stack_fft1(std::span<const ComplexVec> subband_spectra, const FilterBank& bank);

/// Decimated subband histories for one episode. Call update() at each update
/// instant; the newest x_fk sample goes to index 0 of each history.
class SubbandTracker {
 public:
  explicit SubbandTracker(const FilterBank& bank);

  const SubbandFrame& update(const dsp::DelayLine& xf_hist, const dsp::DelayLine& e_hist);

  const SubbandSignals& signals() const { return signals_; }
  const SubbandFrame& frame() const { return frame_; }
  std::span<const dsp::ComplexDelayLine> x_history() const { return x_hist_; }
  void reset();

 private:
  const FilterBank* bank_;
  std::vector<dsp::ComplexDelayLine> x_hist_;
  SubbandSignals signals_;
  SubbandFrame frame_;
};

}  // namespace mdsaf::filterbank
