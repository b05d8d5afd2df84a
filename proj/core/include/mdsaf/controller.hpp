#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mdsaf/acoustics.hpp"
#include "mdsaf/dsp.hpp"

namespace mdsaf {

/// What the episode runner asks of a controller after each error sample.
struct Step {
  bool scheduled = false;  // an update instant of the controller's cadence
  bool execute = false;    // scheduled and not skipped
};

/// Skip rule: of every B + 1 scheduled instants, only the first executes.
inline Step make_step(std::size_t n, std::size_t period, std::size_t skip) {
  Step s;
  s.scheduled = period != 0 && n % period == 0;
  s.execute = s.scheduled && (n / period) % (skip + 1) == 0;
  return s;
}

/// A feedforward ANC controller driven one sample at a time:
/// y = output(x), the plant produces e, then observe(e, step).
class Controller {
 public:
  virtual ~Controller() = default;

  virtual double output(double x_n) = 0;
  virtual void observe(double e_n, Step step) = 0;
  /// Samples between scheduled updates.
  virtual std::size_t update_period() const = 0;
  virtual std::span<const double> weights() const = 0;
  virtual std::string name() const = 0;
  virtual void reset() = 0;
  /// Executed updates since the last reset.
  std::size_t update_count() const { return updates_; }

 protected:
  std::size_t updates_ = 0;
};

/// Shared front end: reference, filtered reference and error histories and a
/// fullband FIR w of length N.
class FullbandFrontEnd {
 public:
  FullbandFrontEnd(std::size_t N, acoustics::AcousticPath estimate);

  /// Pushes x(n), computes x_f(n) and returns w . x(n).
  double push_reference(double x_n);
  void push_error(double e_n) { e_hist_.push(e_n); }

  std::size_t N() const { return w_.size(); }
  std::vector<double>& w() { return w_; }
  const std::vector<double>& w() const { return w_; }
  const dsp::DelayLine& x_history() const { return x_hist_; }
  const dsp::DelayLine& xf_history() const { return xf_hist_; }
  const dsp::DelayLine& e_history() const { return e_hist_; }
  const acoustics::AcousticPath& estimate() const { return estimate_; }
  void reset();

 private:
  acoustics::AcousticPath estimate_;
  std::vector<double> w_;
  dsp::DelayLine x_hist_;
  dsp::DelayLine xf_hist_;
  dsp::DelayLine e_hist_;
};

}  // namespace mdsaf
