#pragma once

// Update rule that reproduces DSNFxLMS inside the inner loop: per-subband
// complex NLMS directions, transformed and stacked by the FFT-1 map.

#include <vector>

#include "mdsaf/baselines.hpp"
#include "mdsaf/filterbank.hpp"
#include "mdsaf/trainer.hpp"

namespace mdsaf::testing {

class OracleRule final : public trainer::UpdateRule {
 public:
  explicit OracleRule(double epsilon = baselines::kEpsilon) : epsilon_(epsilon) {}

  void begin_window(ad::Tape&) override {}

  ad::Var gradient(trainer::UpdateContext& ctx) override {
    const auto& bank = ctx.bank;
    std::vector<dsp::ComplexVec> spectra(bank.feature_subbands());
    for (std::size_t k = 0; k < spectra.size(); ++k) {
      const auto x = ctx.x_hist[k].recent(bank.Q());
      spectra[k] = dsp::fft(baselines::subband_nlms_gradient(x, ctx.e_k[k], epsilon_));
    }
    const auto half = filterbank::fft1_half_spectrum(spectra, bank);
    std::vector<double> planar(2 * half.size());
    for (std::size_t l = 0; l < half.size(); ++l) {
      planar[l] = half[l].real();
      planar[half.size() + l] = half[l].imag();
    }
    return ctx.tape.constant(planar);
  }

 private:
  double epsilon_;
};

}  // namespace mdsaf::testing
