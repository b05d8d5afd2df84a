#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mdsaf/autodiff.hpp"
#include "mdsaf/dsp.hpp"

namespace mdsaf::model {

using dsp::Complex;
using dsp::ComplexVec;

/// M input reals (= 2N), hidden width H, Z output complex values (= N/2).
struct Dims {
  std::size_t M = 0;
  std::size_t H = 0;
  std::size_t Z = 0;

  bool operator==(const Dims&) const = default;
  void validate() const;
  static Dims for_filter(std::size_t N, std::size_t H) { return {2 * N, H, N / 2}; }
};

enum Slot : std::size_t {
  enc_w, enc_b, enc_a,
  gru_wih, gru_bih, gru_whh, gru_bhh,
  ln1_g, ln1_b,
  q_r, k_r, v_r,
  q_w, q_b, k_w, k_b, v_w, v_b,
  ln2_g, ln2_b,
  ff1_w, ff1_b, ff_a, ff2_w, ff2_b,
  dec1_w, dec1_b, dec_a, dec2_w, dec2_b,
  kSlotCount
};

struct Tensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 1;
  std::vector<double> data;

  std::size_t size() const { return data.size(); }
};

/// Every learnable tensor of the update rule, in Slot order.
class ModelParams {
 public:
  ModelParams() = default;
  /// Zero-filled tensors laid out for `dims`.
  explicit ModelParams(Dims dims);

  const Dims& dims() const { return dims_; }
  std::span<Tensor> tensors() { return tensors_; }
  std::span<const Tensor> tensors() const { return tensors_; }
  Tensor& operator[](Slot s) { return tensors_[s]; }
  const Tensor& operator[](Slot s) const { return tensors_[s]; }
  const Tensor& by_name(std::string_view name) const;

  std::size_t param_count() const;
  void fill(double value);
  bool all_finite() const;

 private:
  Dims dims_;
  std::vector<Tensor> tensors_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for matrices and their biases,
/// PReLU slopes 0.25, layer-norm gain 1 and offset 0, q_r/k_r/v_r zero.
/// The last decoder layer is further scaled by `output_scale`; small values
/// start training from near-zero constrained steps.
ModelParams init_params(Dims dims, std::uint64_t seed, double output_scale = 1.0);

struct Cost {
  std::size_t params = 0;
  std::size_t flops = 0;  // multiply-add pairs per forward pass
};
Cost count_params_flops(const ModelParams& params);
Cost count_params_flops(Dims dims);

/// ln(1 + |z|) e^{j arg z}.
Complex compress_input(Complex z);
/// Amplitude ln(clamp(|g|, e^-10, e^10)) / 10 + 1 in [0, 2], phase kept.
Complex constrain_gradient(Complex g);
ComplexVec constrain_gradient(std::span<const Complex> g);

/// Parameter nodes bound on a tape.
struct Bound {
  std::array<ad::Var, kSlotCount> v;
  Dims dims;

  ad::Var operator[](Slot s) const { return v[s]; }
};

/// Binds parameters as tape leaves; gradients accumulate into `grads` when
/// given (same layout as `params`).
Bound bind(ad::Tape& tape, const ModelParams& params, ModelParams* grads = nullptr);
/// Binds raw bindings laid out in Slot order with the shapes of `dims`.
Bound bind(ad::Tape& tape, Dims dims, std::span<const ad::Binding> bindings);
/// Value/gradient bindings of every tensor in Slot order.
std::vector<ad::Binding> bindings(const ModelParams& params, ModelParams* grads = nullptr);

/// q = Linear(u * sigmoid(q_r)) and likewise k, v; returns Softmax[q.k] v.
ad::Var attention(const Bound& p, ad::Var u);

/// Tape version of constrain_gradient on a planar vector.
ad::Var constrain(ad::Var g);

struct Output {
  ad::Var g;  // planar, 2Z reals
  ad::Var h;  // new GRU state, H reals
};

/// One network step. `features` is planar complex (M reals), uncompressed.
Output forward(const Bound& p, ad::Var features, ad::Var h);

/// Inference without gradients, reusing one tape.
class Inference {
 public:
  explicit Inference(const ModelParams& params);

  /// Returns the constrained gradient as Z complex values.
  const ComplexVec& step(std::span<const double> features_planar);
  std::span<const double> hidden() const { return h_; }
  void reset();

 private:
  const ModelParams* params_;
  ad::Tape tape_{false};
  std::vector<double> h_;
  ComplexVec out_;
};

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::size_t N = 0;
  std::size_t K = 0;
  double mu = 0.0;
  std::string variant = "whole-path";
};

constexpr int kOpSetVersion = 1;

/// Writes `<path>` (JSON manifest) and `<path>.bin` (tensor blob).
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const CheckpointMeta& meta);
ModelParams load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

}  // namespace mdsaf::model
