#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdsaf/acoustics.hpp"
#include "mdsaf/autodiff.hpp"
#include "mdsaf/filterbank.hpp"
#include "mdsaf/model.hpp"

namespace mdsaf::trainer {

using dsp::Complex;
using dsp::ComplexVec;

enum class Variant { whole_path, main_delay };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);

/// Secondary-path estimate used for the filtered reference: s itself, or a
/// unit tap at argmax |s|.
acoustics::AcousticPath variant_estimate(Variant variant, const acoustics::AcousticPath& secondary);

/// Inner step size from the expected weight power:
/// mu = 2 L_p mean ||p||^2 / (L_s ||s||^2).
double estimate_step_size(std::span<const acoustics::AcousticPath> primaries, const acoustics::AcousticPath& secondary);

struct MetaConfig {
  std::size_t N = 256;
  std::size_t K = 8;
  std::size_t H = 32;
  std::size_t F = 8;
  double mu = 0.01;
  std::size_t batch_size = 10;
  double learning_rate = 1e-4;
  double lr_decay = 0.5;
  std::size_t patience = 3;
  std::size_t max_epochs = 10;
  Variant variant = Variant::whole_path;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  std::size_t D() const { return K / 2; }
  std::size_t window() const { return F * D(); }
  model::Dims dims() const { return model::Dims::for_filter(N, H); }
  void validate() const;
};

/// One training or evaluation clip with everything the plant needs.
struct Episode {
  std::vector<double> x;
  std::vector<double> d;  // clean primary response
  std::vector<double> v;  // measurement noise
  acoustics::AcousticPath secondary;
  acoustics::AcousticPath estimate;
  acoustics::SaturationSpec saturation;

  std::size_t size() const { return x.size(); }
  void validate() const;
};

/// Builds d = p * x (with an optional path switch) and noise at `snr_db`.
Episode make_episode(std::vector<double> x, const acoustics::AcousticPath& primary,
                     const acoustics::AcousticPath& secondary, acoustics::SaturationSpec saturation, double snr_db,
                     std::uint64_t noise_seed, Variant variant, const acoustics::AcousticPath* switched = nullptr,
                     std::size_t switch_at = 0);

/// Everything one update rule sees at an update instant.
struct UpdateContext {
  ad::Tape& tape;
  const filterbank::FilterBank& bank;
  ad::Var features;                               // planar network input, 2N reals
  std::span<const dsp::ComplexDelayLine> x_hist;  // decimated x_fk, k < K
  std::span<const Complex> e_k;                   // subband errors, k < D
  ad::Var& hidden;
};

/// Produces the planar half-spectrum gradient (N reals) at each update.
class UpdateRule {
 public:
  virtual ~UpdateRule() = default;
  virtual void begin_window(ad::Tape& tape) = 0;
  virtual ad::Var gradient(UpdateContext& ctx) = 0;
  virtual std::size_t hidden_size() const { return 0; }
};

/// The learned rule. Gradients go into the bound buffers when given.
class NetworkRule final : public UpdateRule {
 public:
  NetworkRule(model::Dims dims, std::vector<ad::Binding> bindings);
  NetworkRule(const model::ModelParams& params, model::ModelParams* grads);

  void begin_window(ad::Tape& tape) override;
  ad::Var gradient(UpdateContext& ctx) override;
  std::size_t hidden_size() const override { return dims_.H; }

 private:
  model::Dims dims_;
  std::vector<ad::Binding> bindings_;
  model::Bound bound_;
};

/// Per-episode state carried between windows. Copyable, so a window can be
/// replayed from a snapshot.
struct EpisodeState {
  dsp::DelayLine x_hist;
  dsp::DelayLine xf_hist;
  dsp::DelayLine e_hist;
  dsp::DelayLine f_hist;
  std::vector<dsp::ComplexDelayLine> xk_hist;
  std::vector<double> w_s;  // planar half spectrum, N reals
  std::vector<double> w;    // fullband FIR, N taps
  std::vector<double> h;
  std::size_t n = 0;
  bool diverged = false;

  EpisodeState(const filterbank::FilterBank& bank, const Episode& episode, std::size_t hidden_size);
};

struct WindowResult {
  ad::Var loss;           // L_M of the window
  std::vector<double> e;  // error samples of the window
  bool diverged = false;
};

/// Unrolled inner loop over F * D samples.
class InnerLoop {
 public:
  InnerLoop(const filterbank::FilterBank& bank, std::size_t F, double mu);

  WindowResult run(ad::Tape& tape, const Episode& episode, EpisodeState& state, UpdateRule& rule) const;
  /// Complete windows that fit in an episode.
  std::size_t windows(const Episode& episode) const { return episode.size() / (F_ * bank_->D()); }
  std::size_t window() const { return F_ * bank_->D(); }

 private:
  const filterbank::FilterBank* bank_;
  std::size_t F_;
  double mu_;
  std::vector<std::int64_t> loss_pad_;
  std::vector<std::int64_t> error_pad_;
  std::vector<std::int64_t> feature_index_;
};

struct OptimizerState {
  model::ModelParams m;
  model::ModelParams v;
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-4;
  std::size_t skipped = 0;

  OptimizerState(const model::ModelParams& params, double lr);
};

/// Bias-corrected ADAM step. Non-finite gradients skip the step (and count it).
bool adam_step(OptimizerState& opt, model::ModelParams& params, const model::ModelParams& grads);

struct Dataset {
  std::vector<Episode> train;
  std::vector<Episode> validation;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::optional<double> train_loss;  // absent for epoch 0
  double val_loss = 0.0;
  double learning_rate = 0.0;
  double wall_seconds = 0.0;
  std::size_t diverged = 0;
};

/// One JSON object: {"epoch", "train_L_M", "val_L_M", "lr", "wall_seconds"}.
std::string log_line(const EpochLog& log);
/// First line of a training log: {"config": {...}} with every MetaConfig field.
std::string log_header(const MetaConfig& config);

struct TrainResult {
  model::ModelParams best;
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
  std::size_t diverged = 0;
  std::size_t skipped_steps = 0;
};

/// Mean window L_M over whole episodes, without gradients.
double evaluate_loss(const MetaConfig& config, const filterbank::FilterBank& bank, std::span<const Episode> episodes,
                     const model::ModelParams& params);

/// Meta-training: lockstep windows per batch, averaged gradients, one ADAM
/// step per window, validation after every epoch (epoch 0 = untrained),
/// learning-rate decay when validation exceeds its best, early stopping.
TrainResult train(const MetaConfig& config, const Dataset& data, model::ModelParams params,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace mdsaf::trainer
