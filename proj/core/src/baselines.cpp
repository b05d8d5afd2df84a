#include "mdsaf/baselines.hpp"

#include <cmath>

#include "mdsaf/error.hpp"
#include "mdsaf/kernels.hpp"

namespace mdsaf {

FullbandFrontEnd::FullbandFrontEnd(std::size_t N, acoustics::AcousticPath estimate)
    : estimate_(std::move(estimate)), w_(N, 0.0) {
  if (N == 0) throw ConfigError("filter length must be positive");
  estimate_.validate();
  x_hist_ = dsp::DelayLine(std::max(N, estimate_.length()));
  xf_hist_ = dsp::DelayLine(N);
  e_hist_ = dsp::DelayLine(N);
}

double FullbandFrontEnd::push_reference(double x_n) {
  x_hist_.push(x_n);
  xf_hist_.push(dsp::fir_filter(estimate_.taps, x_hist_));
  return kernels::dot(w_.data(), x_hist_.recent(w_.size()).data(), w_.size());
}

void FullbandFrontEnd::reset() {
  std::fill(w_.begin(), w_.end(), 0.0);
  x_hist_.reset();
  xf_hist_.reset();
  e_hist_.reset();
}

}  // namespace mdsaf

namespace mdsaf::baselines {

void AdaptiveFilterState::validate() const {
  if (w.empty()) throw ConfigError("adaptive filter needs at least one tap");
  if (!(mu > 0.0)) throw ConfigError("step size mu must be positive");
  if (!(epsilon >= 0.0)) throw ConfigError("regularizer epsilon must be non-negative");
}

void fxlms_update(AdaptiveFilterState& state, const dsp::DelayLine& xf_hist, double e_n) {
  const auto xf = xf_hist.recent(state.w.size());
  const double step = state.mu * e_n;
  for (std::size_t l = 0; l < state.w.size(); ++l) state.w[l] -= step * xf[l];
}

void nfxlms_update(AdaptiveFilterState& state, const dsp::DelayLine& xf_hist, double e_n) {
  const auto xf = xf_hist.recent(state.w.size());
  const double power = dsp::dot(xf, xf);
  const double step = state.mu * e_n / (power + state.epsilon);
  for (std::size_t l = 0; l < state.w.size(); ++l) state.w[l] -= step * xf[l];
}

ComplexVec subband_nlms_gradient(std::span<const Complex> x, Complex e, double epsilon) {
  double power = 0.0;
  for (const auto& v : x) power += std::norm(v);
  const Complex scale = e / (power + epsilon);
  ComplexVec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = scale * std::conj(x[i]);
  return g;
}

SubbandLmsState::SubbandLmsState(const filterbank::FilterBank& bank, double mu_, double epsilon_)
    : w_k(bank.K(), ComplexVec(bank.Q())), mu(mu_), epsilon(epsilon_) {
  validate();
}

void SubbandLmsState::validate() const {
  if (w_k.empty()) throw ConfigError("subband state needs at least one subband");
  if (!(mu > 0.0)) throw ConfigError("step size mu must be positive");
  if (!(epsilon >= 0.0)) throw ConfigError("regularizer epsilon must be non-negative");
}

void dsnfxlms_update(SubbandLmsState& state, std::span<const dsp::ComplexDelayLine> x_hist,
                     std::span<const Complex> e_k) {
  if (x_hist.size() < state.w_k.size() || e_k.size() < state.w_k.size()) {
    throw ConfigError("subband update needs one history and one error per subband");
  }
  for (std::size_t k = 0; k < state.w_k.size(); ++k) {
    auto& w = state.w_k[k];
    const auto x = x_hist[k].recent(w.size());
    const auto g = subband_nlms_gradient(x, e_k[k], state.epsilon);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= state.mu * g[i];
  }
}

std::vector<double> dsnfxlms_fullband(const SubbandLmsState& state, const filterbank::FilterBank& bank) {
  std::vector<ComplexVec> spectra(bank.feature_subbands());
  for (std::size_t k = 0; k < spectra.size(); ++k) spectra[k] = dsp::fft(state.w_k[k]);
  return filterbank::stack_fft1(spectra, bank);
}

NfxlmsController::NfxlmsController(std::size_t N, acoustics::AcousticPath estimate, double mu, double epsilon)
    : front_(N, std::move(estimate)), mu_(mu), epsilon_(epsilon) {
  if (!(mu > 0.0)) throw ConfigError("step size mu must be positive");
}

double NfxlmsController::output(double x_n) { return front_.push_reference(x_n); }

void NfxlmsController::observe(double e_n, Step step) {
  front_.push_error(e_n);
  if (!step.execute) return;
  const auto xf = front_.xf_history().recent();
  const double s = mu_ * e_n / (dsp::dot(xf, xf) + epsilon_);
  auto& w = front_.w();
  for (std::size_t l = 0; l < w.size(); ++l) w[l] -= s * xf[l];
  ++updates_;
}

void NfxlmsController::reset() {
  front_.reset();
  updates_ = 0;
}

DsnfxlmsController::DsnfxlmsController(const filterbank::FilterBank& bank, acoustics::AcousticPath estimate,
                                       double mu, double epsilon)
    : bank_(&bank), front_(bank.N(), std::move(estimate)), tracker_(bank), state_(bank, mu, epsilon) {}

double DsnfxlmsController::output(double x_n) { return front_.push_reference(x_n); }

void DsnfxlmsController::observe(double e_n, Step step) {
  front_.push_error(e_n);
  if (!step.scheduled) return;
  tracker_.update(front_.xf_history(), front_.e_history());
  if (!step.execute) return;
  dsnfxlms_update(state_, tracker_.x_history(), tracker_.signals().e);
  front_.w() = dsnfxlms_fullband(state_, *bank_);
  ++updates_;
}

void DsnfxlmsController::reset() {
  front_.reset();
  tracker_.reset();
  state_ = SubbandLmsState(*bank_, state_.mu, state_.epsilon);
  updates_ = 0;
}

}  // namespace mdsaf::baselines
