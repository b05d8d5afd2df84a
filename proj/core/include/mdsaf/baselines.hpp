#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mdsaf/controller.hpp"
#include "mdsaf/filterbank.hpp"

namespace mdsaf::baselines {

using dsp::Complex;
using dsp::ComplexVec;

constexpr double kEpsilon = 1e-8;

struct AdaptiveFilterState {
  std::vector<double> w;
  double mu = 0.01;
  double epsilon = kEpsilon;

  void validate() const;
};

/// w <- w - mu x_f(n) e(n).
void fxlms_update(AdaptiveFilterState& state, const dsp::DelayLine& xf_hist, double e_n);
/// w <- w - mu x_f(n) e(n) / (|x_f(n)|^2 + eps).
void nfxlms_update(AdaptiveFilterState& state, const dsp::DelayLine& xf_hist, double e_n);

/// Complex NLMS direction e conj(x) / (|x|^2 + eps).
ComplexVec subband_nlms_gradient(std::span<const Complex> x, Complex e, double epsilon);

struct SubbandLmsState {
  std::vector<ComplexVec> w_k;  // K vectors of length Q (time domain)
  double mu = 0.01;
  double epsilon = kEpsilon;

  SubbandLmsState() = default;
  SubbandLmsState(const filterbank::FilterBank& bank, double mu, double epsilon = kEpsilon);
  void validate() const;
};

/// Per-subband complex NLMS step on the decimated histories x_hist[k]
/// (newest first) with errors e_k.
void dsnfxlms_update(SubbandLmsState& state, std::span<const dsp::ComplexDelayLine> x_hist,
                     std::span<const Complex> e_k);

/// FFT of every subband weight vector followed by FFT-1 stacking.
std::vector<double> dsnfxlms_fullband(const SubbandLmsState& state, const filterbank::FilterBank& bank);

/// Fullband normalized FxLMS, one update per sample.
class NfxlmsController final : public Controller {
 public:
  NfxlmsController(std::size_t N, acoustics::AcousticPath estimate, double mu, double epsilon = kEpsilon);

  double output(double x_n) override;
  void observe(double e_n, Step step) override;
  std::size_t update_period() const override { return 1; }
  std::span<const double> weights() const override { return front_.w(); }
  std::string name() const override { return "nfxlms"; }
  void reset() override;

 private:
  FullbandFrontEnd front_;
  double mu_;
  double epsilon_;
};

/// Delayless subband NFxLMS with FFT-1 stacking, one update per D samples.
class DsnfxlmsController final : public Controller {
 public:
  DsnfxlmsController(const filterbank::FilterBank& bank, acoustics::AcousticPath estimate, double mu,
                     double epsilon = kEpsilon);

  double output(double x_n) override;
  void observe(double e_n, Step step) override;
  std::size_t update_period() const override { return bank_->D(); }
  std::span<const double> weights() const override { return front_.w(); }
  std::string name() const override { return "dsnfxlms"; }
  void reset() override;

  const SubbandLmsState& state() const { return state_; }

 private:
  const filterbank::FilterBank* bank_;
  FullbandFrontEnd front_;
  filterbank::SubbandTracker tracker_;
  SubbandLmsState state_;
};

}  // namespace mdsaf::baselines
