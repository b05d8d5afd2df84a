#include "mdsaf/filterbank.hpp"

#include <cmath>
#include <string>

#include "mdsaf/error.hpp"

namespace mdsaf::filterbank {

std::vector<double> design_prototype(std::size_t K, std::size_t Q) {
  if (K == 0 || K % 2 != 0) throw ConfigError("subband count K must be even, got " + std::to_string(K));
  if (Q < 8) throw ConfigError("prototype length Q must be at least 8");
  std::vector<double> c(Q);
  const double centre = (static_cast<double>(Q) - 1.0) / 2.0;
  const double cutoff = 1.0 / static_cast<double>(K);  // pi/K rad/sample, normalized to pi
  double sum = 0.0;
  for (std::size_t q = 0; q < Q; ++q) {
    const double t = static_cast<double>(q) - centre;
    const double arg = dsp::kPi * cutoff * t;
    const double sinc = std::abs(t) < 1e-12 ? 1.0 : std::sin(arg) / arg;
    const double window =
        0.54 - 0.46 * std::cos(2.0 * dsp::kPi * static_cast<double>(q) / (static_cast<double>(Q) - 1.0));
    c[q] = cutoff * sinc * window;
    sum += c[q];
  }
  for (auto& v : c) v /= sum;
  return c;
}

std::vector<ComplexVec> analysis_coeffs(std::span<const double> c, std::size_t K) {
  std::vector<ComplexVec> a(K, ComplexVec(c.size()));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t q = 0; q < c.size(); ++q) {
      // reduce qk mod K first so the angle is exact for large q
      const auto r = static_cast<double>((q * k) % K);
      a[k][q] = c[q] * std::polar(1.0, 2.0 * dsp::kPi * r / static_cast<double>(K));
    }
  }
  return a;
}

FilterBank::FilterBank(std::size_t N, std::size_t K) : N_(N), K_(K) {
  if (K == 0 || K % 2 != 0) throw ConfigError("subband count K must be even, got " + std::to_string(K));
  D_ = K / 2;
  if (N == 0 || N % D_ != 0) throw ConfigError("filter length N must be a multiple of K/2");
  Q_ = N / D_;
  prototype_ = design_prototype(K, Q_);
  init();
}

FilterBank::FilterBank(std::vector<double> prototype, std::size_t K) : K_(K), prototype_(std::move(prototype)) {
  if (K == 0 || K % 2 != 0) throw ConfigError("subband count K must be even, got " + std::to_string(K));
  D_ = K / 2;
  Q_ = prototype_.size();
  N_ = Q_ * D_;
  init();
}

void FilterBank::init() {
  if (!dsp::is_power_of_two(Q_) || Q_ < 2) throw ConfigError("subband length Q must be a power of two >= 2");
  if (!dsp::is_power_of_two(N_)) throw ConfigError("filter length N must be a power of two");
  analysis_ = analysis_coeffs(prototype_, K_);
}

std::vector<double> strided(const dsp::DelayLine& hist, std::size_t D, std::size_t Q) {
  if (hist.length() < (Q - 1) * D + 1) throw ConfigError("history too short for subband analysis");
  std::vector<double> out(Q);
  for (std::size_t q = 0; q < Q; ++q) out[q] = hist[q * D];
  return out;
}

SubbandSignals subband_analyze(const FilterBank& bank, const dsp::DelayLine& xf_hist,
                               const dsp::DelayLine& e_hist) {
  if (xf_hist.length() < bank.history_length() || e_hist.length() < bank.history_length()) {
    throw ConfigError("history too short for subband analysis");
  }
  const auto xs = strided(xf_hist, bank.D(), bank.Q());
  const auto es = strided(e_hist, bank.D(), bank.Q());
  SubbandSignals out{ComplexVec(bank.K()), ComplexVec(bank.K())};
  for (std::size_t k = 0; k < bank.K(); ++k) {
    out.x[k] = analyze_one(bank.analysis(k), xs);
    out.e[k] = analyze_one(bank.analysis(k), es);
  }
  return out;
}

Complex analyze_one(std::span<const Complex> a, std::span<const double> s) {
  if (a.size() != s.size()) throw ConfigError("analysis filter and strided history differ in length");
  Complex acc{};
  for (std::size_t q = 0; q < a.size(); ++q) acc += a[q] * s[q];
  return acc;
}

ComplexVec error_spectrum(Complex e_k, std::size_t Q) {
  ComplexVec buf(Q);
  buf[Q - 1] = e_k;
  dsp::fft_plan(Q).forward(buf);
  return buf;
}

SubbandFrame subband_features(const FilterBank& bank, std::span<const dsp::ComplexDelayLine> x_hist,
                              std::span<const Complex> e_k) {
  const std::size_t S = bank.feature_subbands();
  if (x_hist.size() < S || e_k.size() < S) throw ConfigError("too few subbands for feature extraction");
  const auto& plan = dsp::fft_plan(bank.Q());
  SubbandFrame frame;
  frame.x_ff.resize(S);
  frame.e_f.resize(S);
  for (std::size_t k = 0; k < S; ++k) {
    if (x_hist[k].length() != bank.Q()) throw ConfigError("subband history must hold Q entries");
    const auto recent = x_hist[k].recent();
    frame.x_ff[k].assign(recent.begin(), recent.end());
    plan.forward(frame.x_ff[k]);
    frame.e_f[k] = error_spectrum(e_k[k], bank.Q());
  }
  return frame;
}

std::vector<std::size_t> feature_bins(const FilterBank& bank, std::size_t k) {
  const std::size_t half = bank.bins_per_subband();
  std::vector<std::size_t> bins(half);
  for (std::size_t i = 0; i < half; ++i) bins[i] = bank.bin_of(k * half + i);
  return bins;
}

ComplexVec flatten_features(const FilterBank& bank, const SubbandFrame& frame) {
  const std::size_t S = bank.feature_subbands();
  if (frame.x_ff.size() != S || frame.e_f.size() != S) throw ConfigError("feature frame has wrong subband count");
  ComplexVec out;
  out.reserve(bank.feature_size());
  for (std::size_t k = 0; k < S; ++k) {
    const auto bins = feature_bins(bank, k);
    for (auto b : bins) out.push_back(frame.x_ff[k][b]);
    for (auto b : bins) out.push_back(frame.e_f[k][b]);
  }
  return out;
}

std::vector<double> stack_direct(std::span<const Complex> w_s, std::size_t N) {
  if (!dsp::is_power_of_two(N) || N < 2) throw ConfigError("fullband length must be a power of two");
  if (w_s.size() != N / 2) throw ConfigError("half spectrum must hold N/2 bins");
  ComplexVec w_f(N);
  w_f[0] = w_s[0].real();
  for (std::size_t l = 1; l < N / 2; ++l) {
    w_f[l] = w_s[l];
    w_f[N - l] = std::conj(w_s[l]);
  }
  dsp::fft_plan(N).inverse(w_f);
  std::vector<double> w(N);
  double peak = 0.0, residue = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    w[n] = w_f[n].real();
    peak = std::max(peak, std::abs(w[n]));
    residue = std::max(residue, std::abs(w_f[n].imag()));
  }
  if (!(residue <= 1e-12 * std::max(1.0, peak))) {
    throw InvariantError("stacked filter has an imaginary residue of " + std::to_string(residue));
  }
  return w;
}

ComplexVec fft1_half_spectrum(std::span<const ComplexVec> subband_spectra, const FilterBank& bank) {
  if (subband_spectra.size() < bank.feature_subbands()) throw ConfigError("too few subband spectra");
  ComplexVec half(bank.N() / 2);
  for (std::size_t l = 0; l < half.size(); ++l) {
    const auto& spec = subband_spectra[bank.subband_of(l)];
    if (spec.size() != bank.Q()) throw ConfigError("subband spectrum must have Q bins");
    half[l] = spec[bank.bin_of(l)];
  }
  return half;
}

std::vector<double> stack_fft1(std::span<const ComplexVec> subband_spectra, const FilterBank& bank) {
  return stack_direct(fft1_half_spectrum(subband_spectra, bank), bank.N());
}

SubbandTracker::SubbandTracker(const FilterBank& bank)
    : bank_(&bank), x_hist_(bank.K(), dsp::ComplexDelayLine(bank.Q())) {}

const SubbandFrame& SubbandTracker::update(const dsp::DelayLine& xf_hist, const dsp::DelayLine& e_hist) {
  signals_ = subband_analyze(*bank_, xf_hist, e_hist);
  for (std::size_t k = 0; k < bank_->K(); ++k) x_hist_[k].push(signals_.x[k]);
  frame_ = subband_features(*bank_, x_hist_, signals_.e);
  return frame_;
}

void SubbandTracker::reset() {
  for (auto& h : x_hist_) h.reset();
  signals_ = {};
  frame_ = {};
}

}  // namespace mdsaf::filterbank
