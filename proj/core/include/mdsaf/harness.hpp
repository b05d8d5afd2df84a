#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdsaf/acoustics.hpp"
#include "mdsaf/controller.hpp"
#include "mdsaf/filterbank.hpp"
#include "mdsaf/model.hpp"
#include "mdsaf/trainer.hpp"

namespace mdsaf::harness {

constexpr double kSampleRate = 16000.0;

/// Reference noise of `samples` samples. `source` is "white", "tone:<hz>",
/// "band:<lo_hz>:<hi_hz>" or a WAV path (resampled, looped from a seeded
/// offset). Synthetic sources have unit RMS.
std::vector<double> generate_noise(const std::string& source, std::size_t samples, std::uint64_t seed);

/// Produces the planar half-spectrum gradient (N reals) from planar features.
class GradientRule {
 public:
  virtual ~GradientRule() = default;
  virtual std::span<const double> gradient(std::span<const double> features) = 0;
  virtual void reset() = 0;
};

class NetworkGradient final : public GradientRule {
 public:
  explicit NetworkGradient(std::shared_ptr<const model::ModelParams> params);

  std::span<const double> gradient(std::span<const double> features) override;
  void reset() override { inference_.reset(); }

 private:
  std::shared_ptr<const model::ModelParams> params_;
  model::Inference inference_;
  std::vector<double> planar_;
};

/// Learned delayless subband controller: subband features at every update
/// instant, w_s <- w_s - mu g, w = stack_direct(w_s).
class MdsafController final : public Controller {
 public:
  MdsafController(const filterbank::FilterBank& bank, acoustics::AcousticPath estimate,
                  std::unique_ptr<GradientRule> rule, double mu, std::string name = "mdsaf");

  double output(double x_n) override;
  void observe(double e_n, Step step) override;
  std::size_t update_period() const override { return bank_->D(); }
  std::span<const double> weights() const override { return front_.w(); }
  std::string name() const override { return name_; }
  void reset() override;

  std::span<const double> half_spectrum() const { return w_s_; }

 private:
  const filterbank::FilterBank* bank_;
  FullbandFrontEnd front_;
  filterbank::SubbandTracker tracker_;
  std::unique_ptr<GradientRule> rule_;
  double mu_;
  std::string name_;
  std::vector<double> w_s_;  // planar
  std::vector<double> features_;
  dsp::ComplexVec half_;
};

/// Controller that never adapts (w = 0).
class FrozenController final : public Controller {
 public:
  explicit FrozenController(std::size_t N) : w_(N, 0.0) {}
  double output(double) override { return 0.0; }
  void observe(double, Step) override {}
  std::size_t update_period() const override { return 1; }
  std::span<const double> weights() const override { return w_; }
  std::string name() const override { return "frozen"; }
  void reset() override {}

 private:
  std::vector<double> w_;
};

struct Scenario {
  std::string source = "white";
  double duration = 1.0;  // seconds
  double snr_db = std::numeric_limits<double>::infinity();
  acoustics::SaturationSpec saturation = acoustics::SaturationSpec::linear();
  acoustics::AcousticPath primary;
  std::optional<acoustics::AcousticPath> switched_primary;  // takes over at duration / 2
  acoustics::AcousticPath secondary;
  trainer::Variant variant = trainer::Variant::whole_path;
  std::size_t skip = 0;  // B
  std::size_t runs = 1;  // R
  std::uint64_t seed = 1;

  std::size_t samples() const;
  void validate() const;
  /// Stable hex digest of every field that affects the simulation.
  std::string digest() const;
};

struct TimingReport {
  double median_ms = 0.0;
  double mean_ms = 0.0;
  double max_ms = 0.0;
  double budget_ms = 0.0;
  bool satisfied = false;
  std::size_t updates = 0;
};

/// (B + 1) * period / fs in milliseconds.
double update_budget_ms(std::size_t period, std::size_t skip, double sample_rate = kSampleRate);
TimingReport make_timing_report(std::vector<double> update_ms, double budget_ms);
std::string to_json(const TimingReport& report);

struct Psd {
  std::vector<double> hz;
  std::vector<double> db;
};

/// Welch estimate with a Hann window; dB relative to a full-scale sine,
/// floored at -200 dB.
Psd psd(std::span<const double> signal, std::size_t window = 1024, double overlap = 0.5,
        double sample_rate = kSampleRate);

/// 10 log10(sum_n mean_r e^2 / sum_n mean_r d^2) with clean d.
double nmse(std::span<const acoustics::EpisodeTrace> runs);

struct NmseCurve {
  std::vector<std::size_t> sample_index;  // window start
  std::vector<double> db;
};
NmseCurve nmse_curve(std::span<const acoustics::EpisodeTrace> runs, std::size_t window);

struct MetricsRecord {
  std::string controller;
  std::string scenario_digest;
  std::vector<double> nmse_db_runs;
  double nmse_db = 0.0;
  NmseCurve curve;
  Psd psd_off;  // d
  Psd psd_on;   // e
};

struct EpisodeResult {
  std::vector<acoustics::EpisodeTrace> traces;
  MetricsRecord metrics;
  TimingReport timing;
  std::size_t updates = 0;  // executed updates, summed over runs
};

/// Builds a controller given the secondary-path estimate of the scenario.
using ControllerFactory = std::function<std::unique_ptr<Controller>(const acoustics::AcousticPath& estimate)>;

/// One sample loop: y = output(x), e = plant(x, y, v), observe(e, step).
/// Update times (ms) of executed updates go to `update_ms` when given.
acoustics::EpisodeTrace simulate(Controller& controller, acoustics::Plant& plant, std::span<const double> x,
                                 std::span<const double> v, std::size_t skip,
                                 const acoustics::AcousticPath* switched = nullptr, std::size_t switch_at = 0,
                                 std::vector<double>* update_ms = nullptr);

/// R runs with reseeded reference and measurement noise, metrics averaged.
EpisodeResult run_episode(const ControllerFactory& factory, const Scenario& scenario,
                          std::size_t curve_window = 1600);

/// Times `iterations` executed updates on white-noise input.
TimingReport measure_update_time(Controller& controller, std::size_t skip, std::size_t iterations,
                                 std::uint64_t seed = 1);

void write_metrics_csv(const std::filesystem::path& path, const MetricsRecord& record);
void write_curve_csv(const std::filesystem::path& path, const NmseCurve& curve);
void write_psd_csv(const std::filesystem::path& path, const Psd& off, const Psd& on);

// Acoustic path sets -------------------------------------------------------

/// Nine primary paths (reference positions to the error mic) and one
/// secondary path (loudspeaker to error mic).
struct PathSet {
  std::vector<acoustics::AcousticPath> primary;
  acoustics::AcousticPath secondary;
};

PathSet generate_paths(const acoustics::RoomSpec& room, std::size_t primary_length, std::size_t secondary_length);
/// primary_<i>.rir and secondary.rir.
void save_paths(const std::filesystem::path& dir, const PathSet& paths);
PathSet load_paths(const std::filesystem::path& dir);

// Datasets -----------------------------------------------------------------

struct DatasetRequest {
  std::vector<std::string> sources;  // WAV files, directories of WAVs, or generator ids
  std::vector<double> snr_db{0, 5, 10, 15, 20, 25, 30};
  std::vector<double> eta{0.1, 1.0, 10.0, std::numeric_limits<double>::infinity()};
  double clip_seconds = 3.0;
  std::size_t count = 9000;
  double validation_fraction = 0.1;
  std::uint64_t seed = 1;
};

struct ManifestEntry {
  std::string source;
  std::uint64_t seed = 0;
  std::size_t position = 0;  // primary path index
  double snr_db = 0.0;
  double eta = 0.0;  // inf: linear
  bool validation = false;
};

struct Manifest {
  double clip_seconds = 3.0;
  std::uint64_t seed = 1;
  std::vector<ManifestEntry> entries;
};

Manifest make_dataset(const DatasetRequest& request);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

acoustics::SaturationSpec saturation_for(double eta);

trainer::Episode materialize(const ManifestEntry& entry, double clip_seconds, const PathSet& paths,
                             trainer::Variant variant);
trainer::Dataset materialize(const Manifest& manifest, const PathSet& paths, trainer::Variant variant);

}  // namespace mdsaf::harness
