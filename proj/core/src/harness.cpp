#include "mdsaf/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "mdsaf/error.hpp"
#include "mdsaf/rng.hpp"
#include "mdsaf/wav.hpp"

namespace mdsaf::harness {

namespace {

constexpr std::uint64_t kReferenceStream = 0x7265666572656e63ULL;
constexpr std::size_t kBandTaps = 255;

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

std::vector<double> split_numbers(const std::string& spec, std::size_t skip_prefix) {
  std::vector<double> out;
  std::stringstream ss(spec.substr(skip_prefix));
  std::string item;
  while (std::getline(ss, item, ':')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + item + "' in noise source '" + spec + "'");
    }
  }
  return out;
}

void normalize_rms(std::vector<double>& x) {
  double p = 0.0;
  for (double v : x) p += v * v;
  if (p <= 0.0) return;
  const double g = 1.0 / std::sqrt(p / static_cast<double>(x.size()));
  for (auto& v : x) v *= g;
}

/// Hamming-windowed sinc bandpass with edges lo, hi (Hz).
std::vector<double> bandpass(double lo, double hi) {
  std::vector<double> h(kBandTaps);
  const double c = (static_cast<double>(kBandTaps) - 1.0) / 2.0;
  const double f1 = lo / kSampleRate, f2 = hi / kSampleRate;
  for (std::size_t i = 0; i < kBandTaps; ++i) {
    const double t = static_cast<double>(i) - c;
    const double ideal = t == 0.0 ? 2.0 * (f2 - f1)
                                  : (std::sin(2.0 * dsp::kPi * f2 * t) - std::sin(2.0 * dsp::kPi * f1 * t)) / (dsp::kPi * t);
    const double w = 0.54 - 0.46 * std::cos(2.0 * dsp::kPi * static_cast<double>(i) / (kBandTaps - 1.0));
    h[i] = ideal * w;
  }
  return h;
}

const std::vector<double>& cached_wav(const std::string& path) {
  static std::mutex mutex;
  static std::map<std::string, std::vector<double>> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(path);
  if (it == cache.end()) it = cache.emplace(path, read_wav_16k(path)).first;
  return it->second;
}

bool is_generator(const std::string& s) {
  return s == "white" || starts_with(s, "tone:") || starts_with(s, "band:");
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::vector<double> generate_noise(const std::string& source, std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw ConfigError("noise length must be positive");
  SplitMix64 rng(seed, kReferenceStream);
  std::vector<double> x(samples);
  if (source == "white") {
    for (auto& v : x) v = rng.gaussian();
    return x;
  }
  if (starts_with(source, "tone:")) {
    const auto p = split_numbers(source, 5);
    if (p.size() != 1 || !(p[0] > 0.0 && p[0] < kSampleRate / 2)) throw ConfigError("tone frequency out of range");
    for (std::size_t n = 0; n < samples; ++n) {
      x[n] = std::sqrt(2.0) * std::sin(2.0 * dsp::kPi * p[0] * static_cast<double>(n) / kSampleRate);
    }
    return x;
  }
  if (starts_with(source, "band:")) {
    const auto p = split_numbers(source, 5);
    if (p.size() != 2 || !(p[0] >= 0.0 && p[0] < p[1] && p[1] <= kSampleRate / 2)) {
      throw ConfigError("band edges must satisfy 0 <= lo < hi <= 8000");
    }
    const auto h = bandpass(p[0], p[1]);
    std::vector<double> white(samples + kBandTaps);
    for (auto& v : white) v = rng.gaussian();
    const auto y = dsp::causal_convolve(white, h);
    std::copy(y.begin() + kBandTaps, y.end(), x.begin());
    normalize_rms(x);
    return x;
  }
  if (!std::filesystem::is_regular_file(source)) throw InputError("noise source '" + source + "' not found");
  const auto& audio = cached_wav(source);
  if (audio.empty()) throw InputError("WAV file '" + source + "' holds no samples");
  std::size_t pos = rng.below(audio.size());
  for (auto& v : x) {
    v = audio[pos];
    if (++pos == audio.size()) pos = 0;
  }
  return x;
}

// Controllers ---------------------------------------------------------------

NetworkGradient::NetworkGradient(std::shared_ptr<const model::ModelParams> params)
    : params_(std::move(params)), inference_(*params_), planar_(2 * params_->dims().Z) {}

std::span<const double> NetworkGradient::gradient(std::span<const double> features) {
  const auto& g = inference_.step(features);
  const std::size_t Z = g.size();
  for (std::size_t i = 0; i < Z; ++i) {
    planar_[i] = g[i].real();
    planar_[Z + i] = g[i].imag();
  }
  return planar_;
}

MdsafController::MdsafController(const filterbank::FilterBank& bank, acoustics::AcousticPath estimate,
                                 std::unique_ptr<GradientRule> rule, double mu, std::string name)
    : bank_(&bank),
      front_(bank.N(), std::move(estimate)),
      tracker_(bank),
      rule_(std::move(rule)),
      mu_(mu),
      name_(std::move(name)),
      w_s_(bank.N(), 0.0),
      features_(2 * bank.feature_size()),
      half_(bank.N() / 2) {
  if (!rule_) throw ConfigError("controller needs a gradient rule");
  if (!(mu > 0.0)) throw ConfigError("step size mu must be positive");
}

double MdsafController::output(double x_n) { return front_.push_reference(x_n); }

void MdsafController::observe(double e_n, Step step) {
  front_.push_error(e_n);
  if (!step.scheduled) return;
  tracker_.update(front_.xf_history(), front_.e_history());
  if (!step.execute) return;
  const auto f = filterbank::flatten_features(*bank_, tracker_.frame());
  const std::size_t F = f.size();
  for (std::size_t i = 0; i < F; ++i) {
    features_[i] = f[i].real();
    features_[F + i] = f[i].imag();
  }
  const auto g = rule_->gradient(features_);
  const std::size_t N = bank_->N();
  if (g.size() != N) throw InvariantError("gradient rule returned the wrong length");
  for (std::size_t i = 0; i < N; ++i) w_s_[i] -= mu_ * g[i];
  for (std::size_t l = 0; l < N / 2; ++l) half_[l] = {w_s_[l], w_s_[N / 2 + l]};
  front_.w() = filterbank::stack_direct(half_, N);
  ++updates_;
}

void MdsafController::reset() {
  front_.reset();
  tracker_.reset();
  rule_->reset();
  std::fill(w_s_.begin(), w_s_.end(), 0.0);
  updates_ = 0;
}

// Scenario and metrics ------------------------------------------------------

std::size_t Scenario::samples() const { return static_cast<std::size_t>(std::llround(duration * kSampleRate)); }

void Scenario::validate() const {
  if (!(duration > 0.0) || samples() == 0) throw ConfigError("scenario duration must be positive");
  if (runs == 0) throw ConfigError("scenario needs at least one run");
  if (std::isnan(snr_db)) throw ConfigError("SNR must be a number");
  saturation.validate();
  primary.validate();
  secondary.validate();
  if (switched_primary) switched_primary->validate();
}

std::string Scenario::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto bytes = [&](const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  };
  auto num = [&](double v) { bytes(&v, sizeof v); };
  auto path = [&](const acoustics::AcousticPath& p) {
    const std::uint64_t n = p.taps.size();
    bytes(&n, sizeof n);
    bytes(p.taps.data(), p.taps.size() * sizeof(double));
  };
  bytes(source.data(), source.size());
  num(duration);
  num(snr_db);
  num(saturation.eta);
  num(saturation.mode == acoustics::SaturationMode::linear ? 0.0 : 1.0);
  path(primary);
  if (switched_primary) path(*switched_primary);
  path(secondary);
  num(variant == trainer::Variant::whole_path ? 0.0 : 1.0);
  num(static_cast<double>(skip));
  num(static_cast<double>(runs));
  bytes(&seed, sizeof seed);
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

double update_budget_ms(std::size_t period, std::size_t skip, double sample_rate) {
  return 1000.0 * static_cast<double>(skip + 1) * static_cast<double>(period) / sample_rate;
}

TimingReport make_timing_report(std::vector<double> update_ms, double budget_ms) {
  TimingReport r;
  r.budget_ms = budget_ms;
  r.updates = update_ms.size();
  if (update_ms.empty()) return r;
  std::sort(update_ms.begin(), update_ms.end());
  const std::size_t n = update_ms.size();
  r.median_ms = n % 2 ? update_ms[n / 2] : 0.5 * (update_ms[n / 2 - 1] + update_ms[n / 2]);
  r.mean_ms = std::accumulate(update_ms.begin(), update_ms.end(), 0.0) / static_cast<double>(n);
  r.max_ms = update_ms.back();
  r.satisfied = r.median_ms < budget_ms;
  return r;
}

std::string to_json(const TimingReport& report) {
  nlohmann::ordered_json j;
  j["median_ms"] = report.median_ms;
  j["mean_ms"] = report.mean_ms;
  j["max_ms"] = report.max_ms;
  j["budget_ms"] = report.budget_ms;
  j["satisfied"] = report.satisfied;
  j["updates"] = report.updates;
  return j.dump(2);
}

Psd psd(std::span<const double> signal, std::size_t window, double overlap, double sample_rate) {
  if (!dsp::is_power_of_two(window) || window < 2) throw ConfigError("PSD window must be a power of two");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("PSD overlap must lie in [0, 1)");
  if (signal.size() < window) throw InputError("signal shorter than the PSD window");
  const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(window * (1.0 - overlap))));
  std::vector<double> w(window);
  double wsum = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * dsp::kPi * static_cast<double>(i) / static_cast<double>(window));
    wsum += w[i];
  }
  const std::size_t bins = window / 2 + 1;
  std::vector<double> acc(bins, 0.0);
  std::size_t segments = 0;
  const auto& plan = dsp::fft_plan(window);
  dsp::ComplexVec buf(window);
  for (std::size_t start = 0; start + window <= signal.size(); start += hop) {
    for (std::size_t i = 0; i < window; ++i) buf[i] = signal[start + i] * w[i];
    plan.forward(buf);
    for (std::size_t k = 0; k < bins; ++k) acc[k] += std::norm(buf[k]);
    ++segments;
  }
  Psd out;
  out.hz.resize(bins);
  out.db.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    const double one_sided = (k == 0 || k == bins - 1) ? 1.0 : 4.0;
    const double p = one_sided * acc[k] / static_cast<double>(segments) / (wsum * wsum);
    out.hz[k] = static_cast<double>(k) * sample_rate / static_cast<double>(window);
    out.db[k] = p > 0.0 ? std::max(-200.0, 10.0 * std::log10(p)) : -200.0;
  }
  return out;
}

double nmse(std::span<const acoustics::EpisodeTrace> runs) {
  if (runs.empty()) throw InputError("NMSE needs at least one run");
  double pe = 0.0, pd = 0.0;
  for (const auto& r : runs) {
    if (r.e.size() != r.d.size()) throw InputError("trace e and d differ in length");
    for (std::size_t n = 0; n < r.e.size(); ++n) {
      pe += r.e[n] * r.e[n];
      pd += r.d[n] * r.d[n];
    }
  }
  if (!(pd > 0.0)) throw InputError("desired signal has zero power");
  return 10.0 * std::log10(pe / pd);
}

NmseCurve nmse_curve(std::span<const acoustics::EpisodeTrace> runs, std::size_t window) {
  if (window == 0) throw ConfigError("NMSE window must be positive");
  if (runs.empty()) throw InputError("NMSE needs at least one run");
  NmseCurve c;
  const std::size_t n = runs.front().size();
  for (std::size_t start = 0; start + window <= n; start += window) {
    double pe = 0.0, pd = 0.0;
    for (const auto& r : runs) {
      for (std::size_t i = start; i < start + window; ++i) {
        pe += r.e[i] * r.e[i];
        pd += r.d[i] * r.d[i];
      }
    }
    if (!(pd > 0.0)) continue;
    c.sample_index.push_back(start);
    c.db.push_back(10.0 * std::log10(pe / pd));
  }
  return c;
}

acoustics::EpisodeTrace simulate(Controller& controller, acoustics::Plant& plant, std::span<const double> x,
                                 std::span<const double> v, std::size_t skip, const acoustics::AcousticPath* switched,
                                 std::size_t switch_at, std::vector<double>* update_ms) {
  if (v.size() != x.size()) throw ConfigError("reference and measurement noise differ in length");
  acoustics::EpisodeTrace trace;
  trace.reserve(x.size());
  const std::size_t period = controller.update_period();
  for (std::size_t n = 0; n < x.size(); ++n) {
    if (switched != nullptr && n == switch_at) plant.switch_primary(*switched);
    const double y = controller.output(x[n]);
    const double e = plant.step(x[n], y, v[n]);
    const Step step = make_step(n, period, skip);
    if (update_ms != nullptr && step.execute) {
      const auto t0 = std::chrono::steady_clock::now();
      controller.observe(e, step);
      const auto t1 = std::chrono::steady_clock::now();
      update_ms->push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    } else {
      controller.observe(e, step);
    }
    trace.push(x[n], plant.last_d(), y, plant.last_y_prime(), e);
  }
  return trace;
}

EpisodeResult run_episode(const ControllerFactory& factory, const Scenario& scenario, std::size_t curve_window) {
  scenario.validate();
  const std::size_t samples = scenario.samples();
  const std::size_t switch_at = samples / 2;
  const acoustics::AcousticPath* switched = scenario.switched_primary ? &*scenario.switched_primary : nullptr;
  const auto estimate = trainer::variant_estimate(scenario.variant, scenario.secondary);

  EpisodeResult result;
  std::vector<double> update_ms;
  std::vector<double> off_power, on_power;
  std::size_t period = 1;
  for (std::size_t r = 0; r < scenario.runs; ++r) {
    const std::uint64_t seed = derive_seed(scenario.seed, r);
    const auto x = generate_noise(scenario.source, samples, seed);
    const auto d = acoustics::primary_response(x, scenario.primary, switched, switch_at);
    const auto v = acoustics::measurement_noise(d, scenario.snr_db, derive_seed(seed, 1));
    auto controller = factory(estimate);
    if (!controller) throw ConfigError("controller factory returned nothing");
    acoustics::Plant plant(scenario.primary, scenario.secondary, scenario.saturation,
                           switched ? switched->length() : 0);
    auto trace = simulate(*controller, plant, x, v, scenario.skip, switched, switch_at, &update_ms);
    result.updates += controller->update_count();
    if (r == 0) {
      result.metrics.controller = controller->name();
      period = controller->update_period();
    }
    result.metrics.nmse_db_runs.push_back(nmse(std::span(&trace, 1)));

    if (samples >= 1024) {
      const Psd off = psd(trace.d), on = psd(trace.e);
      if (off_power.empty()) {
        off_power.assign(off.db.size(), 0.0);
        on_power.assign(on.db.size(), 0.0);
        result.metrics.psd_off.hz = off.hz;
        result.metrics.psd_on.hz = on.hz;
      }
      for (std::size_t k = 0; k < off.db.size(); ++k) {
        off_power[k] += std::pow(10.0, off.db[k] / 10.0);
        on_power[k] += std::pow(10.0, on.db[k] / 10.0);
      }
    }
    result.traces.push_back(std::move(trace));
  }
  auto to_db = [&](const std::vector<double>& p) {
    std::vector<double> db(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double m = p[k] / static_cast<double>(scenario.runs);
      db[k] = m > 0.0 ? std::max(-200.0, 10.0 * std::log10(m)) : -200.0;
    }
    return db;
  };
  result.metrics.psd_off.db = to_db(off_power);
  result.metrics.psd_on.db = to_db(on_power);
  result.metrics.scenario_digest = scenario.digest();
  result.metrics.nmse_db = nmse(result.traces);
  result.metrics.curve = nmse_curve(result.traces, std::min(curve_window, samples));
  result.timing = make_timing_report(std::move(update_ms), update_budget_ms(period, scenario.skip));
  return result;
}

TimingReport measure_update_time(Controller& controller, std::size_t skip, std::size_t iterations,
                                 std::uint64_t seed) {
  if (iterations < 100) throw ConfigError("timing needs at least 100 iterations");
  controller.reset();
  SplitMix64 rng(seed, kReferenceStream);
  const std::size_t period = controller.update_period();
  std::vector<double> times;
  times.reserve(iterations);
  for (std::size_t n = 0; times.size() < iterations; ++n) {
    controller.output(rng.gaussian());
    const double e = 0.1 * rng.gaussian();
    const Step step = make_step(n, period, skip);
    if (!step.execute) {
      controller.observe(e, step);
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    controller.observe(e, step);
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return make_timing_report(std::move(times), update_budget_ms(period, skip));
}

void write_metrics_csv(const std::filesystem::path& path, const MetricsRecord& record) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "controller,scenario,run,nmse_db\n";
  for (std::size_t r = 0; r < record.nmse_db_runs.size(); ++r) {
    out << record.controller << ',' << record.scenario_digest << ',' << r << ','
        << format_double(record.nmse_db_runs[r]) << '\n';
  }
  out << record.controller << ',' << record.scenario_digest << ",mean," << format_double(record.nmse_db) << '\n';
}

void write_curve_csv(const std::filesystem::path& path, const NmseCurve& curve) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "sample_index,nmse_db\n";
  for (std::size_t i = 0; i < curve.db.size(); ++i) {
    out << curve.sample_index[i] << ',' << format_double(curve.db[i]) << '\n';
  }
}

void write_psd_csv(const std::filesystem::path& path, const Psd& off, const Psd& on) {
  if (off.hz.size() != on.hz.size()) throw ConfigError("PSD arrays differ in length");
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "hz,db_off,db_on\n";
  for (std::size_t k = 0; k < off.hz.size(); ++k) {
    out << format_double(off.hz[k]) << ',' << format_double(off.db[k]) << ',' << format_double(on.db[k]) << '\n';
  }
}

// Paths -----------------------------------------------------------------------

PathSet generate_paths(const acoustics::RoomSpec& room, std::size_t primary_length, std::size_t secondary_length) {
  room.validate();
  PathSet set;
  for (const auto& pos : acoustics::cube_positions()) {
    set.primary.push_back(acoustics::image_method_rir(room, pos, room.error_mic_pos, primary_length));
  }
  set.secondary = acoustics::image_method_rir(room, room.speaker_pos, room.error_mic_pos, secondary_length);
  return set;
}

void save_paths(const std::filesystem::path& dir, const PathSet& paths) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < paths.primary.size(); ++i) {
    acoustics::write_rir(dir / ("primary_" + std::to_string(i) + ".rir"), paths.primary[i], 16000);
  }
  acoustics::write_rir(dir / "secondary.rir", paths.secondary, 16000);
}

PathSet load_paths(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("path directory " + dir.string() + " not found");
  PathSet set;
  for (std::size_t i = 0;; ++i) {
    const auto p = dir / ("primary_" + std::to_string(i) + ".rir");
    if (!std::filesystem::exists(p)) break;
    set.primary.push_back(acoustics::read_rir(p));
  }
  if (set.primary.empty()) throw InputError("no primary_<i>.rir files in " + dir.string());
  set.secondary = acoustics::read_rir(dir / "secondary.rir");
  return set;
}

// Datasets -------------------------------------------------------------------

namespace {

std::vector<std::string> expand_sources(const std::vector<std::string>& sources) {
  std::vector<std::string> out;
  for (const auto& s : sources) {
    if (is_generator(s)) {
      out.push_back(s);
    } else if (std::filesystem::is_directory(s)) {
      std::vector<std::string> wavs;
      for (const auto& entry : std::filesystem::directory_iterator(s)) {
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (entry.is_regular_file() && ext == ".wav") wavs.push_back(entry.path().string());
      }
      std::sort(wavs.begin(), wavs.end());
      out.insert(out.end(), wavs.begin(), wavs.end());
    } else if (std::filesystem::is_regular_file(s)) {
      out.push_back(s);
    } else {
      throw InputError("corpus entry '" + s + "' is neither a WAV file, a directory nor a generator");
    }
  }
  if (out.empty()) throw InputError("corpus is empty");
  return out;
}

nlohmann::json number_or_null(double v) { return std::isinf(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }
double null_as_inf(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

}  // namespace

Manifest make_dataset(const DatasetRequest& request) {
  if (request.count == 0) throw ConfigError("dataset count must be positive");
  if (!(request.clip_seconds > 0.0)) throw ConfigError("clip length must be positive");
  if (request.snr_db.empty() || request.eta.empty()) throw ConfigError("SNR and eta sets must be nonempty");
  if (!(request.validation_fraction >= 0.0 && request.validation_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in [0, 1)");
  }
  for (double e : request.eta) {
    if (!(e > 0.0)) throw ConfigError("eta values must be positive");
  }
  const auto sources = expand_sources(request.sources);
  Manifest m;
  m.clip_seconds = request.clip_seconds;
  m.seed = request.seed;
  const auto validation =
      static_cast<std::size_t>(std::llround(request.validation_fraction * static_cast<double>(request.count)));
  SplitMix64 rng(request.seed, 0x64617461ULL);
  const std::size_t positions = acoustics::cube_positions().size();
  for (std::size_t i = 0; i < request.count; ++i) {
    ManifestEntry e;
    e.source = sources[rng.below(sources.size())];
    e.seed = derive_seed(request.seed, i, 7);
    e.position = rng.below(positions);
    e.snr_db = request.snr_db[rng.below(request.snr_db.size())];
    e.eta = request.eta[rng.below(request.eta.size())];
    e.validation = i >= request.count - validation;
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  nlohmann::ordered_json j;
  j["format"] = "mdsaf-manifest";
  j["version"] = 1;
  j["clip_seconds"] = manifest.clip_seconds;
  j["seed"] = manifest.seed;
  std::size_t val = 0;
  for (const auto& e : manifest.entries) val += e.validation ? 1 : 0;
  j["split"] = {{"train", manifest.entries.size() - val}, {"validation", val}};
  auto& list = j["episodes"] = nlohmann::ordered_json::array();
  for (const auto& e : manifest.entries) {
    nlohmann::ordered_json item;
    item["source"] = e.source;
    item["seed"] = e.seed;
    item["position"] = e.position;
    item["snr_db"] = number_or_null(e.snr_db);
    item["eta"] = number_or_null(e.eta);
    item["split"] = e.validation ? "validation" : "train";
    list.push_back(std::move(item));
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest " + path.string());
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format") != "mdsaf-manifest" || j.at("version") != 1) throw InputError("unsupported manifest format");
    m.clip_seconds = j.at("clip_seconds").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& item : j.at("episodes")) {
      ManifestEntry e;
      e.source = item.at("source").get<std::string>();
      e.seed = item.at("seed").get<std::uint64_t>();
      e.position = item.at("position").get<std::size_t>();
      e.snr_db = null_as_inf(item.at("snr_db"));
      e.eta = null_as_inf(item.at("eta"));
      e.validation = item.at("split") == "validation";
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw InputError("malformed manifest " + path.string() + ": " + ex.what());
  }
  return m;
}

acoustics::SaturationSpec saturation_for(double eta) {
  return std::isinf(eta) ? acoustics::SaturationSpec::linear() : acoustics::SaturationSpec::finite(eta);
}

trainer::Episode materialize(const ManifestEntry& entry, double clip_seconds, const PathSet& paths,
                             trainer::Variant variant) {
  if (entry.position >= paths.primary.size()) throw ConfigError("manifest position has no primary path");
  const auto samples = static_cast<std::size_t>(std::llround(clip_seconds * kSampleRate));
  auto x = generate_noise(entry.source, samples, entry.seed);
  return trainer::make_episode(std::move(x), paths.primary[entry.position], paths.secondary,
                               saturation_for(entry.eta), entry.snr_db, derive_seed(entry.seed, 1), variant);
}

trainer::Dataset materialize(const Manifest& manifest, const PathSet& paths, trainer::Variant variant) {
  trainer::Dataset data;
  for (const auto& e : manifest.entries) {
    (e.validation ? data.validation : data.train).push_back(materialize(e, manifest.clip_seconds, paths, variant));
  }
  return data;
}

}  // namespace mdsaf::harness
