// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.
//
//   mdsaf_acceptance            all criteria
//   mdsaf_acceptance 1 5 7      selected criteria

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "mdsaf/acoustics.hpp"
#include "mdsaf/autodiff.hpp"
#include "mdsaf/baselines.hpp"
#include "mdsaf/dsp.hpp"
#include "mdsaf/filterbank.hpp"
#include "mdsaf/harness.hpp"
#include "mdsaf/model.hpp"
#include "mdsaf/rng.hpp"
#include "mdsaf/trainer.hpp"
#include "../support/oracle_rule.hpp"
#include "../support/saturation_oracle.hpp"

using namespace mdsaf;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances.
constexpr double kGradRelTol = 1e-5;
constexpr double kGradSeconds = 60.0;
constexpr double kToyLevel = 0.003;
constexpr double kOracleTol = 1e-10;
constexpr double kToneTargetDb = -20.0;
constexpr double kToneSeconds = 5.0;
constexpr double kDeskNmseDb = -5.0;
constexpr double kDeskMinutes = 30.0;
constexpr double kLutRelTol = 1e-8;
constexpr double kLinearAbsTol = 1e-9;
constexpr double kFftTol = 1e-12;
constexpr double kResidueTol = 1e-12;
constexpr double kLossTol = 1e-10;
constexpr double kPhaseTol = 1e-12;
// |amp e^{j phi}| recomputed from real and imaginary parts rounds by a few ulp
constexpr double kModulusSlack = 4.0 * std::numeric_limits<double>::epsilon();
constexpr double kSnrTolDb = 0.5;
constexpr double kBudgetMs = 1.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

acoustics::AcousticPath taps(std::vector<double> t) { return acoustics::AcousticPath{std::move(t)}; }

// 1 -------------------------------------------------------------------------
// Toy N=64, K=4, H=8 with F=2: one window of F*D = 4 samples holding two
// update instants, from a fresh episode state. The reference sits at
// -50 dBFS: central differences carry about |L| 1e-10 absolute roundoff,
// which must stay below 1e-5 of the 1e-8 denominator floor.
Outcome gradient_check() {
  const auto t0 = Clock::now();
  const std::size_t N = 64, K = 4, H = 8, F = 2;
  const double mu = 0.05;
  const filterbank::FilterBank bank(N, K);
  const trainer::InnerLoop loop(bank, F, mu);

  auto x = harness::generate_noise("white", loop.window(), 3);
  for (auto& v : x) v *= kToyLevel;
  // the secondary path reaches the error within the window
  const auto ep = trainer::make_episode(std::move(x), taps({0.0, 0.6, -0.3, 0.2}), taps({0.9, -0.3, 0.1}),
                                        acoustics::SaturationSpec::finite(1.0),
                                        std::numeric_limits<double>::infinity(), 4, trainer::Variant::whole_path);

  auto params = model::init_params(model::Dims::for_filter(N, H), 7);
  std::vector<std::span<double>> spans;
  std::vector<std::string> names;
  for (auto& t : params.tensors()) {
    spans.emplace_back(t.data);
    names.push_back(t.name);
  }
  const model::Dims dims = params.dims();
  ad::Objective f = [&](ad::Tape& tape, std::span<const ad::Binding> b) {
    trainer::NetworkRule rule(dims, std::vector<ad::Binding>(b.begin(), b.end()));
    trainer::EpisodeState state(bank, ep, rule.hidden_size());
    return loop.run(tape, ep, state, rule).loss;
  };
  const auto r = ad::grad_check(f, spans, names);
  ad::Tape probe(false);
  const double l_m = f(probe, model::bindings(params)).scalar();
  const double secs = seconds_since(t0);
  return {r.max_rel_error <= kGradRelTol && secs < kGradSeconds && r.checked > 0,
          fmt("max rel %.3g at %s over %zu coords (%zu excluded), L_M %.3g, %.1f s", r.max_rel_error,
              r.worst.c_str(), r.checked, r.excluded, l_m, secs)};
}

// 2 -------------------------------------------------------------------------
Outcome oracle_equivalence() {
  const std::size_t N = 256, K = 8;
  const double mu = 0.01;
  const filterbank::FilterBank bank(N, K);
  const trainer::InnerLoop loop(bank, 8, mu);
  const auto paths = harness::generate_paths(acoustics::RoomSpec{}, 512, 256);
  const auto primary = paths.primary[4];
  auto x = harness::generate_noise("band:100:2000", 8000, 11);
  const auto ep = trainer::make_episode(x, primary, paths.secondary, acoustics::SaturationSpec::finite(2.0), 25.0, 12,
                                        trainer::Variant::whole_path);

  testing::OracleRule rule;
  trainer::EpisodeState state(bank, ep, 0);
  std::vector<double> e_loop;
  for (std::size_t j = 0; j < loop.windows(ep); ++j) {
    ad::Tape tape(false);
    const auto w = loop.run(tape, ep, state, rule);
    e_loop.insert(e_loop.end(), w.e.begin(), w.e.end());
  }

  baselines::DsnfxlmsController ctl(bank, ep.estimate, mu);
  acoustics::Plant plant(primary, ep.secondary, ep.saturation);
  const auto trace = harness::simulate(ctl, plant, ep.x, ep.v, 0);
  double worst_e = 0.0, worst_w = 0.0, peak = 0.0;
  for (std::size_t n = 0; n < e_loop.size(); ++n) {
    worst_e = std::max(worst_e, std::abs(e_loop[n] - trace.e[n]));
    peak = std::max(peak, std::abs(trace.e[n]));
  }
  for (std::size_t l = 0; l < N; ++l) worst_w = std::max(worst_w, std::abs(state.w[l] - ctl.weights()[l]));
  return {worst_e <= kOracleTol && worst_w <= kOracleTol && !e_loop.empty(),
          fmt("max |de| %.3g (peak |e| %.3g), max |dw| %.3g over %zu samples", worst_e, peak, worst_w,
              e_loop.size())};
}

// 3 -------------------------------------------------------------------------
Outcome tone_convergence() {
  const auto paths = harness::generate_paths(acoustics::RoomSpec{}, 2048, 1024);
  harness::Scenario sc;
  sc.source = "tone:500";
  sc.duration = kToneSeconds;
  sc.primary = paths.primary[4];
  sc.secondary = paths.secondary;
  auto factory = [](const acoustics::AcousticPath& est) {
    return std::make_unique<baselines::NfxlmsController>(1024, est, 0.01);
  };
  const auto r = harness::run_episode(factory, sc);
  const auto& c = r.metrics.curve;
  double first = -1.0;
  for (std::size_t i = 0; i < c.db.size(); ++i) {
    if (c.db[i] <= kToneTargetDb) {
      first = static_cast<double>(c.sample_index[i] + 1600) / harness::kSampleRate;
      break;
    }
  }
  const double last = c.db.back();
  return {last <= kToneTargetDb, fmt("final 0.1 s window %.2f dB, first below %.0f dB after %.2f s, overall %.2f dB",
                                     last, kToneTargetDb, first, r.metrics.nmse_db)};
}

// 4 -------------------------------------------------------------------------
Outcome desk_training() {
  const auto t0 = Clock::now();
  const auto paths = harness::generate_paths(acoustics::RoomSpec{}, 256, 128);

  harness::DatasetRequest req;
  req.sources = {"band:100:2000"};
  req.snr_db = {30.0};
  req.eta = {std::numeric_limits<double>::infinity()};
  req.clip_seconds = 1.0;
  req.count = 200;
  req.validation_fraction = 0.1;
  req.seed = 1;
  const auto data = harness::materialize(harness::make_dataset(req), paths, trainer::Variant::whole_path);

  trainer::MetaConfig m;
  m.N = 256;
  m.K = 8;
  m.H = 32;
  m.F = 8;
  m.mu = 0.01;
  m.batch_size = 10;
  m.learning_rate = 1e-4;
  m.max_epochs = 5;
  m.patience = 5;
  m.seed = 1;
  auto result = trainer::train(m, data, model::init_params(m.dims(), m.seed, 1e-3), [](const trainer::EpochLog& e) {
    std::fprintf(stderr, "  %s\n", trainer::log_line(e).c_str());
  });

  bool decreasing = result.log.size() >= 6;
  std::string vals;
  for (std::size_t i = 0; i < result.log.size(); ++i) {
    if (i > 0 && !(result.log[i].val_loss < result.log[i - 1].val_loss)) decreasing = false;
    vals += fmt("%s%.3g", i ? " " : "", result.log[i].val_loss);
  }

  auto best = std::make_shared<const model::ModelParams>(result.best);
  const filterbank::FilterBank bank(m.N, m.K);
  auto learned = [&](const acoustics::AcousticPath& est) -> std::unique_ptr<Controller> {
    return std::make_unique<harness::MdsafController>(bank, est, std::make_unique<harness::NetworkGradient>(best),
                                                      m.mu);
  };
  auto nfxlms = [&](const acoustics::AcousticPath& est) -> std::unique_ptr<Controller> {
    return std::make_unique<baselines::NfxlmsController>(m.N, est, 0.01);
  };
  double ours = 0.0, base = 0.0;
  const std::size_t held_out = 10;
  for (std::size_t i = 0; i < held_out; ++i) {
    harness::Scenario sc;
    sc.source = "band:100:2000";
    sc.duration = 1.0;
    sc.snr_db = 30.0;
    sc.primary = paths.primary[i % paths.primary.size()];
    sc.secondary = paths.secondary;
    sc.seed = 90000 + i;
    ours += harness::run_episode(learned, sc).metrics.nmse_db;
    base += harness::run_episode(nfxlms, sc).metrics.nmse_db;
  }
  ours /= held_out;
  base /= held_out;
  const double minutes = seconds_since(t0) / 60.0;
  const bool pass = decreasing && ours <= kDeskNmseDb && ours < base && minutes < kDeskMinutes &&
                    result.diverged == 0;
  return {pass, fmt("val L_M [%s]%s; held-out NMSE %.2f dB vs NFxLMS %.2f dB; %zu diverged windows; %.1f min",
                    vals.c_str(), decreasing ? "" : " not strictly decreasing", ours, base, result.diverged,
                    minutes)};
}

// 5 -------------------------------------------------------------------------
Outcome saturation_accuracy() {
  double worst = 0.0, worst_u = 0.0;
  for (int i = 0; i <= 6000; ++i) {
    const double u = 6.0 * i / 6000.0;
    const double ref = testing::normalized_integral_oracle(u);
    const double got = acoustics::normalized_saturation_integral(u);
    const double rel = ref == 0.0 ? std::abs(got) : std::abs(got - ref) / std::abs(ref);
    if (rel > worst) {
      worst = rel;
      worst_u = u;
    }
  }
  double lin = 0.0;
  for (double eta : {1e6, 1e7, 1e9}) {
    for (int i = -1000; i <= 1000; ++i) {
      const double y = i / 100.0;
      lin = std::max(lin, std::abs(acoustics::saturate(y, acoustics::SaturationSpec::finite(eta)) - y));
    }
  }
  return {worst <= kLutRelTol && lin <= kLinearAbsTol,
          fmt("LUT max rel %.3g at u=%.3f; max |f(y)-y| %.3g for eta >= 1e6, |y| <= 10", worst, worst_u, lin)};
}

// 6 -------------------------------------------------------------------------
Outcome spectral_identities() {
  SplitMix64 rng(6);
  double fft_err = 0.0;
  for (std::size_t n = 2; n <= 4096; n *= 2) {
    dsp::ComplexVec x(n);
    for (auto& z : x) z = {rng.gaussian(), rng.gaussian()};
    const auto back = dsp::ifft(dsp::fft(x));
    for (std::size_t i = 0; i < n; ++i) fft_err = std::max(fft_err, std::abs(back[i] - x[i]));
  }

  // Hermitian completion and a full complex IFFT, independent of stack_direct
  double residue = 0.0, stack_err = 0.0;
  for (std::size_t N : {16u, 256u, 1024u}) {
    for (int trial = 0; trial < 20; ++trial) {
      dsp::ComplexVec half(N / 2);
      for (auto& z : half) z = {rng.gaussian(), rng.gaussian()};
      dsp::ComplexVec full(N, 0.0);
      full[0] = half[0].real();
      for (std::size_t l = 1; l < N / 2; ++l) {
        full[l] = half[l];
        full[N - l] = std::conj(half[l]);
      }
      const auto time = dsp::ifft(full);
      double peak = 0.0, imag = 0.0;
      for (const auto& z : time) {
        peak = std::max(peak, std::abs(z.real()));
        imag = std::max(imag, std::abs(z.imag()));
      }
      residue = std::max(residue, imag / peak);
      const auto w = filterbank::stack_direct(half, N);
      for (std::size_t i = 0; i < N; ++i) stack_err = std::max(stack_err, std::abs(w[i] - time[i].real()) / peak);
    }
  }

  // L(n) = Q e(n)^2 inside the inner loop
  const filterbank::FilterBank bank(256, 8);
  const trainer::InnerLoop loop(bank, 8, 0.01);
  const auto paths = harness::generate_paths(acoustics::RoomSpec{}, 512, 256);
  const auto ep = trainer::make_episode(harness::generate_noise("white", 4 * loop.window(), 8), paths.primary[0],
                                        paths.secondary, acoustics::SaturationSpec::linear(), 20.0, 9,
                                        trainer::Variant::whole_path);
  const auto params = model::init_params(model::Dims::for_filter(256, 32), 3, 1e-3);
  trainer::NetworkRule rule(params, nullptr);
  trainer::EpisodeState state(bank, ep, rule.hidden_size());
  double loss_err = 0.0;
  for (std::size_t j = 0; j < loop.windows(ep); ++j) {
    ad::Tape tape(false);
    const auto r = loop.run(tape, ep, state, rule);
    double expect = 0.0;
    for (double e : r.e) expect += static_cast<double>(bank.Q()) * e * e;
    expect /= static_cast<double>(r.e.size());
    loss_err = std::max(loss_err, std::abs(r.loss.scalar() - expect) / std::max(expect, 1e-300));
  }
  return {fft_err <= kFftTol && residue <= kResidueTol && stack_err <= kResidueTol && loss_err <= kLossTol,
          fmt("FFT roundtrip %.3g, stack residue %.3g (vs stack_direct %.3g), L = Q e^2 rel %.3g", fft_err, residue,
              stack_err, loss_err)};
}

// 7 -------------------------------------------------------------------------
Outcome constraint_range() {
  SplitMix64 rng(7);
  double lo = 2.0, hi = 0.0, phase = 0.0;
  for (int i = 0; i < 1000000; ++i) {
    const double mag = std::exp(rng.uniform(-25.0, 25.0));
    const double arg = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const auto c = model::constrain_gradient(std::polar(mag, arg));
    const double a = std::abs(c);
    lo = std::min(lo, a);
    hi = std::max(hi, a);
    if (a > 0.0) phase = std::max(phase, std::abs(std::remainder(std::arg(c) - arg, 2.0 * std::numbers::pi)));
  }
  return {lo >= 0.0 && hi <= 2.0 * (1.0 + kModulusSlack) && phase <= kPhaseTol,
          fmt("amplitude in [%.3g, %.17g], max phase error %.3g", lo, hi, phase)};
}

// 8 -------------------------------------------------------------------------
Outcome snr_calibration() {
  const auto paths = harness::generate_paths(acoustics::RoomSpec{}, 512, 256);
  double worst = 0.0;
  for (double snr : {5.0, 15.0, 25.0}) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto x = harness::generate_noise("band:100:2000", 16000, seed);
      const auto d = acoustics::primary_response(x, paths.primary[seed % 9]);
      const auto v = acoustics::measurement_noise(d, snr, seed + 100);
      double pd = 0.0, pv = 0.0;
      for (std::size_t n = 0; n < d.size(); ++n) {
        pd += d[n] * d[n];
        pv += v[n] * v[n];
      }
      worst = std::max(worst, std::abs(10.0 * std::log10(pd / pv) - snr));
    }
  }
  return {worst <= kSnrTolDb, fmt("max |measured - requested| %.3f dB at 5/15/25 dB over 10 seeds", worst)};
}

// 9 -------------------------------------------------------------------------
Outcome full_scale_timing() {
  const std::size_t N = 1024, K = 32, H = 128;
  const filterbank::FilterBank bank(N, K);
  auto params = std::make_shared<const model::ModelParams>(model::init_params(model::Dims::for_filter(N, H), 1));
  const auto paths = harness::generate_paths(acoustics::RoomSpec{}, 2048, 1024);
  harness::MdsafController ctl(bank, paths.secondary, std::make_unique<harness::NetworkGradient>(params), 0.01);
  const auto report = harness::measure_update_time(ctl, 0, 1000, 1);
  const auto cost = model::count_params_flops(*params);
  return {report.median_ms < kBudgetMs,
          fmt("median %.3f ms, mean %.3f ms, max %.3f ms (budget %.1f ms); %zu params vs 1119752, %zu multiply-adds "
              "vs 1419520",
              report.median_ms, report.mean_ms, report.max_ms, report.budget_ms, cost.params, cost.flops)};
}

// 10 ------------------------------------------------------------------------
Outcome skip_schedule() {
  const std::size_t N = 256, K = 8;
  const filterbank::FilterBank bank(N, K);
  auto params = std::make_shared<const model::ModelParams>(model::init_params(model::Dims::for_filter(N, 32), 2, 1e-2));
  const auto paths = harness::generate_paths(acoustics::RoomSpec{}, 512, 256);
  const auto x = harness::generate_noise("white", 8000, 10);
  const auto d = acoustics::primary_response(x, paths.primary[2]);
  const auto v = acoustics::measurement_noise(d, 20.0, 11);
  auto make = [&] {
    return harness::MdsafController(bank, paths.secondary, std::make_unique<harness::NetworkGradient>(params), 0.01);
  };

  auto a = make();
  acoustics::Plant pa(paths.primary[2], paths.secondary, acoustics::SaturationSpec::linear());
  const auto ta = harness::simulate(a, pa, x, v, 0);

  // the same loop with no skip logic at all
  auto b = make();
  acoustics::Plant pb(paths.primary[2], paths.secondary, acoustics::SaturationSpec::linear());
  std::vector<double> eb;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double y = b.output(x[n]);
    const double e = pb.step(x[n], y, v[n]);
    const bool due = n % b.update_period() == 0;
    b.observe(e, Step{due, due});
    eb.push_back(e);
  }
  const bool identical = ta.e == eb && std::equal(a.weights().begin(), a.weights().end(), b.weights().begin());

  auto c = make();
  acoustics::Plant pc(paths.primary[2], paths.secondary, acoustics::SaturationSpec::linear());
  harness::simulate(c, pc, x, v, 1);
  const std::size_t full = a.update_count(), half = c.update_count();
  return {identical && half == (full + 1) / 2,
          fmt("B=0 %s no-skip trace; updates %zu (B=0) vs %zu (B=1)", identical ? "bit-identical to" : "differs from",
              full, half)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "inner-loop gradient check", gradient_check},
      {2, "oracle rule equals DSNFxLMS", oracle_equivalence},
      {3, "NFxLMS 500 Hz tone", tone_convergence},
      {4, "desk-scale meta-training", desk_training},
      {5, "saturation table accuracy", saturation_accuracy},
      {6, "FFT, stacking and loss identities", spectral_identities},
      {7, "gradient constraint range and phase", constraint_range},
      {8, "SNR calibration", snr_calibration},
      {9, "full-scale update time", full_scale_timing},
      {10, "skip updating", skip_schedule},
  };
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
