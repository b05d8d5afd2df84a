#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mdsaf::ad {

using NodeId = std::uint32_t;

class Tape;

/// Handle to a tape node. Cheap to copy; valid until the tape is cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  std::size_t size() const;
  std::span<const double> value() const;
  double scalar() const;
  bool needs_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Parameter storage plus the buffer its gradient accumulates into.
struct Binding {
  std::span<const double> value;
  std::span<double> grad;  // empty: treated as a constant
};

/// Append-only record of one computation. Nodes own their values except
/// parameter leaves, which view caller storage and accumulate their gradient
/// straight into the bound buffer. clear() keeps node storage for reuse.
class Tape {
 public:
  using Backward = std::function<void(Tape&)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  Var constant(std::span<const double> value, std::size_t rows = 0, std::size_t cols = 0);
  Var constant(double value);
  Var parameter(const Binding& binding, std::size_t rows = 0, std::size_t cols = 0);

  /// New node of `size` values; `inputs` decide whether it needs a gradient.
  Var emit(std::size_t size, std::initializer_list<Var> inputs);
  Var emit(std::size_t size, std::span<const Var> inputs);
  void set_backward(Var v, Backward fn);

  std::span<double> mutable_value(Var v);
  std::span<const double> value(NodeId id) const;
  std::size_t size(NodeId id) const { return nodes_[id].size; }
  std::size_t rows(NodeId id) const { return nodes_[id].rows; }
  std::size_t cols(NodeId id) const { return nodes_[id].cols; }
  bool needs_grad(NodeId id) const { return nodes_[id].needs_grad; }

  /// Gradient slot, zero-initialized on first access.
  std::span<double> grad(NodeId id);
  /// Gradient if any has been accumulated, else empty.
  std::span<const double> grad_if_any(NodeId id) const;

  /// Seeds d loss / d loss = 1 and runs every recorded backward in reverse.
  void backward(Var loss);

  void clear();
  std::size_t node_count() const { return count_; }

  /// Running hash of the branch taken at every non-smooth point; two
  /// evaluations with equal hashes lie in the same smooth region.
  std::uint64_t kink_hash() const { return kink_hash_; }
  void record_region(std::uint64_t region);

 private:
  struct Node {
    std::vector<double> storage;
    const double* external = nullptr;
    double* external_grad = nullptr;
    std::size_t size = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> grad;
    bool has_grad = false;
    bool needs_grad = false;
    Backward backward;
  };

  NodeId allocate(std::size_t size);

  std::vector<Node> nodes_;
  std::size_t count_ = 0;
  bool grad_enabled_ = true;
  std::uint64_t kink_hash_ = 0xcbf29ce484222325ULL;
};

// Elementwise and linear algebra. Matrices are row-major rows x cols.
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product; either side may be a scalar (size 1) and broadcast.
Var mul(Var a, Var b);
Var scale(Var a, double c);
/// a * c + d elementwise with constants c, d.
Var affine_const(Var a, double c, double d);
/// W x for W (rows x cols) and x (cols).
Var matmul(Var W, Var x);
/// W x + b.
Var affine(Var W, Var b, Var x);
Var dot(Var a, Var b);
Var sum(Var a);
Var sum_squares(Var a);

Var sigmoid(Var a);
Var tanh(Var a);
Var log(Var a);
Var log1p(Var a);
Var softmax(Var a);
/// x for x >= 0, slope * x otherwise; slope is a size-1 node.
Var prelu(Var x, Var slope);
/// (x - mean) / sqrt(var + eps) * gain + bias.
Var layernorm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Passes the gradient where lo <= x < hi.
Var clamp(Var x, double lo, double hi);

Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var slice(Var x, std::size_t offset, std::size_t length);
/// out[i] = x[index[i]], or 0 where index[i] < 0.
Var gather(Var x, std::span<const std::int64_t> index);
/// constant + sum_i coeff[i] * inputs[i] over scalar inputs.
Var linear_combination(std::span<const Var> inputs, std::span<const double> coeff, double constant);
/// Scalar node holding `value` (computed elsewhere) whose sensitivities to
/// the scalar inputs are `coeff`.
Var linearized(std::span<const Var> inputs, std::span<const double> coeff, double value);

// Complex vectors are planar: n real parts followed by n imaginary parts.
/// |z| per element (zero gradient at z = 0).
Var complex_magnitude(Var z);
/// Unit phasor z / |z|, planar; (1, 0) at z = 0 with zero gradient.
Var complex_phase_split(Var z);
/// ln(1 + |z|) e^{j arg z}, with its exact Jacobian (identity at z = 0).
Var complex_compress(Var z);
/// Unnormalized DFT of a planar vector; power-of-two length.
Var fft(Var z);
/// Real IFFT of the Hermitian spectrum built from a planar half spectrum.
Var stack_direct(Var half, std::size_t N);

/// Registers f(y) with derivative df(y) for a scalar y; `region` names the
/// branch taken (for kink tracking).
Var scalar_map(Var y, double f, double df, std::uint64_t region = 0);

/// Result of a finite-difference check.
struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // coordinates whose perturbation crossed a kink
  std::string worst;         // "tensor[index]" of the largest error
};

using Objective = std::function<Var(Tape&, std::span<const Binding>)>;

/// Compares reverse-mode gradients of `f` with central differences of step
/// `step` on every coordinate of every tensor (or `max_per_tensor` evenly
/// spaced coordinates when positive). Relative error uses the denominator
/// max(|a|, |b|, floor); the floor keeps roundoff in the difference quotient
/// (about 1e-16 |f| / step) from dominating near-zero derivatives.
GradCheck grad_check(const Objective& f, std::span<const std::span<double>> params,
                     std::span<const std::string> names, double step = 1e-6, std::size_t max_per_tensor = 0,
                     double floor = 1e-8);

}  // namespace mdsaf::ad
