#include "mdsaf/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "mdsaf/dsp.hpp"
#include "mdsaf/error.hpp"
#include "mdsaf/filterbank.hpp"
#include "mdsaf/kernels.hpp"

namespace mdsaf::ad {

std::size_t Var::size() const { return tape_->size(id_); }
std::span<const double> Var::value() const { return tape_->value(id_); }
double Var::scalar() const {
  if (size() != 1) throw ConfigError("scalar() on a non-scalar node");
  return value()[0];
}
bool Var::needs_grad() const { return tape_->needs_grad(id_); }

NodeId Tape::allocate(std::size_t size) {
  if (count_ == nodes_.size()) nodes_.emplace_back();
  Node& n = nodes_[count_];
  n.storage.assign(size, 0.0);
  n.external = nullptr;
  n.external_grad = nullptr;
  n.size = size;
  n.rows = size;
  n.cols = 1;
  n.has_grad = false;
  n.needs_grad = false;
  n.backward = nullptr;
  return static_cast<NodeId>(count_++);
}

Var Tape::constant(std::span<const double> value, std::size_t rows, std::size_t cols) {
  const NodeId id = allocate(value.size());
  Node& n = nodes_[id];
  std::copy(value.begin(), value.end(), n.storage.begin());
  if (rows != 0) {
    if (rows * cols != value.size()) throw ConfigError("constant shape does not match its data");
    n.rows = rows;
    n.cols = cols;
  }
  return {this, id};
}

Var Tape::constant(double value) {
  const NodeId id = allocate(1);
  nodes_[id].storage[0] = value;
  return {this, id};
}

Var Tape::parameter(const Binding& binding, std::size_t rows, std::size_t cols) {
  const NodeId id = allocate(0);
  Node& n = nodes_[id];
  n.external = binding.value.data();
  n.size = binding.value.size();
  n.rows = n.size;
  n.cols = 1;
  if (rows != 0) {
    if (rows * cols != n.size) throw ConfigError("parameter shape does not match its data");
    n.rows = rows;
    n.cols = cols;
  }
  if (grad_enabled_ && !binding.grad.empty()) {
    if (binding.grad.size() != n.size) throw ConfigError("gradient buffer does not match parameter");
    n.external_grad = binding.grad.data();
    n.needs_grad = true;
  }
  return {this, id};
}

Var Tape::emit(std::size_t size, std::initializer_list<Var> inputs) {
  return emit(size, std::span<const Var>(inputs.begin(), inputs.size()));
}

Var Tape::emit(std::size_t size, std::span<const Var> inputs) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw ConfigError("operands belong to different tapes");
    needs = needs || nodes_[v.id()].needs_grad;
  }
  const NodeId id = allocate(size);
  nodes_[id].needs_grad = grad_enabled_ && needs;
  return {this, id};
}

void Tape::set_backward(Var v, Backward fn) {
  Node& n = nodes_[v.id()];
  if (n.needs_grad) n.backward = std::move(fn);
}

std::span<double> Tape::mutable_value(Var v) {
  Node& n = nodes_[v.id()];
  if (n.external) throw ConfigError("parameter leaves are read-only");
  return {n.storage.data(), n.size};
}

std::span<const double> Tape::value(NodeId id) const {
  const Node& n = nodes_[id];
  return {n.external ? n.external : n.storage.data(), n.size};
}

std::span<double> Tape::grad(NodeId id) {
  Node& n = nodes_[id];
  if (n.external_grad) return {n.external_grad, n.size};
  if (!n.has_grad) {
    n.grad.assign(n.size, 0.0);
    n.has_grad = true;
  }
  return {n.grad.data(), n.size};
}

std::span<const double> Tape::grad_if_any(NodeId id) const {
  const Node& n = nodes_[id];
  if (n.external_grad) return {n.external_grad, n.size};
  if (!n.has_grad) return {};
  return {n.grad.data(), n.size};
}

void Tape::backward(Var loss) {
  if (loss.size() != 1) throw ConfigError("backward needs a scalar loss");
  if (!nodes_[loss.id()].needs_grad) return;
  grad(loss.id())[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.has_grad) n.backward(*this);
  }
}

void Tape::clear() {
  for (std::size_t i = 0; i < count_; ++i) nodes_[i].backward = nullptr;
  count_ = 0;
  kink_hash_ = 0xcbf29ce484222325ULL;
}

void Tape::record_region(std::uint64_t region) {
  kink_hash_ = (kink_hash_ ^ (region + 0x9e3779b97f4a7c15ULL)) * 0x100000001b3ULL;
}

namespace {

void require_same_size(Var a, Var b, const char* op) {
  if (a.size() != b.size()) throw ConfigError(std::string(op) + ": operand sizes differ");
}

void require_even(Var z, const char* op) {
  if (z.size() % 2 != 0) throw ConfigError(std::string(op) + ": planar complex input needs an even size");
}

}  // namespace

Var add(Var a, Var b) {
  require_same_size(a, b, "add");
  Tape& t = a.tape();
  Var out = t.emit(a.size(), {a, b});
  auto y = t.mutable_value(out);
  const auto av = a.value(), bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  t.set_backward(out, [a = a.id(), b = b.id(), o = out.id()](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    for (NodeId in : {a, b}) {
      if (!tp.needs_grad(in)) continue;
      auto gi = tp.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
  return out;
}

Var sub(Var a, Var b) {
  require_same_size(a, b, "sub");
  Tape& t = a.tape();
  Var out = t.emit(a.size(), {a, b});
  auto y = t.mutable_value(out);
  const auto av = a.value(), bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  t.set_backward(out, [a = a.id(), b = b.id(), o = out.id()](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    if (tp.needs_grad(a)) {
      auto ga = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(b)) {
      auto gb = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Var mul(Var a, Var b) {
  if (a.size() != b.size() && a.size() != 1 && b.size() != 1) throw ConfigError("mul: incompatible sizes");
  Tape& t = a.tape();
  const std::size_t n = std::max(a.size(), b.size());
  Var out = t.emit(n, {a, b});
  auto y = t.mutable_value(out);
  const auto av = a.value(), bv = b.value();
  const std::size_t sa = a.size() == 1 ? 0 : 1, sb = b.size() == 1 ? 0 : 1;
  for (std::size_t i = 0; i < n; ++i) y[i] = av[i * sa] * bv[i * sb];
  t.set_backward(out, [a = a.id(), b = b.id(), o = out.id(), sa, sb](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    const auto av = tp.value(a), bv = tp.value(b);
    if (tp.needs_grad(a)) {
      auto ga = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i * sa] += g[i] * bv[i * sb];
    }
    if (tp.needs_grad(b)) {
      auto gb = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i * sb] += g[i] * av[i * sa];
    }
  });
  return out;
}

Var scale(Var a, double c) { return affine_const(a, c, 0.0); }

Var affine_const(Var a, double c, double d) {
  Tape& t = a.tape();
  Var out = t.emit(a.size(), {a});
  auto y = t.mutable_value(out);
  const auto av = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * c + d;
  t.set_backward(out, [a = a.id(), o = out.id(), c](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
  return out;
}

namespace {

Var matvec_impl(Var W, const Var* b, Var x) {
  Tape& t = W.tape();
  const std::size_t rows = t.rows(W.id()), cols = t.cols(W.id());
  if (x.size() != cols) throw ConfigError("matmul: inner dimensions differ");
  if (b && b->size() != rows) throw ConfigError("affine: bias size differs from output size");
  Var out = b ? t.emit(rows, {W, *b, x}) : t.emit(rows, {W, x});
  kernels::matvec(W.value().data(), x.value().data(), b ? b->value().data() : nullptr,
                  t.mutable_value(out).data(), rows, cols);
  const NodeId bid = b ? b->id() : out.id();
  t.set_backward(out, [w = W.id(), bid, x = x.id(), o = out.id(), has_b = b != nullptr](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    const std::size_t rows = tp.rows(w), cols = tp.cols(w);
    const double* Wv = tp.value(w).data();
    const double* xv = tp.value(x).data();
    if (tp.needs_grad(w)) {
      double* gW = tp.grad(w).data();
      for (std::size_t i = 0; i < rows; ++i) {
        if (g[i] != 0.0) kernels::axpy(g[i], xv, gW + i * cols, cols);
      }
    }
    if (has_b && tp.needs_grad(bid)) {
      auto gb = tp.grad(bid);
      for (std::size_t i = 0; i < rows; ++i) gb[i] += g[i];
    }
    if (tp.needs_grad(x)) {
      double* gx = tp.grad(x).data();
      for (std::size_t i = 0; i < rows; ++i) {
        if (g[i] != 0.0) kernels::axpy(g[i], Wv + i * cols, gx, cols);
      }
    }
  });
  return out;
}

}  // namespace

Var matmul(Var W, Var x) { return matvec_impl(W, nullptr, x); }
Var affine(Var W, Var b, Var x) { return matvec_impl(W, &b, x); }

Var dot(Var a, Var b) {
  require_same_size(a, b, "dot");
  Tape& t = a.tape();
  Var out = t.emit(1, {a, b});
  t.mutable_value(out)[0] = kernels::dot(a.value().data(), b.value().data(), a.size());
  t.set_backward(out, [a = a.id(), b = b.id(), o = out.id()](Tape& tp) {
    const double g = tp.grad_if_any(o)[0];
    if (tp.needs_grad(a)) kernels::axpy(g, tp.value(b).data(), tp.grad(a).data(), tp.size(a));
    if (tp.needs_grad(b)) kernels::axpy(g, tp.value(a).data(), tp.grad(b).data(), tp.size(b));
  });
  return out;
}

Var sum(Var a) {
  Tape& t = a.tape();
  Var out = t.emit(1, {a});
  double s = 0.0;
  for (double v : a.value()) s += v;
  t.mutable_value(out)[0] = s;
  t.set_backward(out, [a = a.id(), o = out.id()](Tape& tp) {
    const double g = tp.grad_if_any(o)[0];
    for (auto& v : tp.grad(a)) v += g;
  });
  return out;
}

Var sum_squares(Var a) {
  Tape& t = a.tape();
  Var out = t.emit(1, {a});
  double s = 0.0;
  for (double v : a.value()) s += v * v;
  t.mutable_value(out)[0] = s;
  t.set_backward(out, [a = a.id(), o = out.id()](Tape& tp) {
    const double g = tp.grad_if_any(o)[0];
    const auto av = tp.value(a);
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * g * av[i];
  });
  return out;
}

namespace {

// Unary elementwise op whose local derivative is a function of (x, y).
template <typename F, typename DF>
Var unary(Var a, F f, DF df) {
  Tape& t = a.tape();
  Var out = t.emit(a.size(), {a});
  auto y = t.mutable_value(out);
  const auto av = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(av[i]);
  t.set_backward(out, [a = a.id(), o = out.id(), df](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    const auto av = tp.value(a);
    const auto yv = tp.value(o);
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * df(av[i], yv[i]);
  });
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var sigmoid(Var a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var log(Var a) {
  for (double v : a.value()) {
    if (!(v > 0.0)) throw ConfigError("log of a non-positive value");
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var log1p(Var a) {
  for (double v : a.value()) {
    if (!(v > -1.0)) throw ConfigError("log1p argument must exceed -1");
  }
  return unary(a, [](double x) { return std::log1p(x); }, [](double x, double) { return 1.0 / (1.0 + x); });
}

Var softmax(Var a) {
  Tape& t = a.tape();
  if (a.size() == 0) throw ConfigError("softmax of an empty vector");
  Var out = t.emit(a.size(), {a});
  auto y = t.mutable_value(out);
  const auto av = a.value();
  const double peak = *std::max_element(av.begin(), av.end());
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = std::exp(av[i] - peak);
    total += y[i];
  }
  for (auto& v : y) v /= total;
  t.set_backward(out, [a = a.id(), o = out.id()](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    const auto yv = tp.value(o);
    double inner = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) inner += g[i] * yv[i];
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += yv[i] * (g[i] - inner);
  });
  return out;
}

Var prelu(Var x, Var slope) {
  if (slope.size() != 1) throw ConfigError("prelu slope must be a scalar");
  Tape& t = x.tape();
  Var out = t.emit(x.size(), {x, slope});
  auto y = t.mutable_value(out);
  const auto xv = x.value();
  const double s = slope.value()[0];
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool pos = xv[i] >= 0.0;
    y[i] = pos ? xv[i] : s * xv[i];
    t.record_region(pos ? 1 : 0);
  }
  t.set_backward(out, [x = x.id(), a = slope.id(), o = out.id()](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    const auto xv = tp.value(x);
    const double s = tp.value(a)[0];
    if (tp.needs_grad(x)) {
      auto gx = tp.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] >= 0.0 ? g[i] : s * g[i];
    }
    if (tp.needs_grad(a)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv[i] < 0.0) acc += g[i] * xv[i];
      }
      tp.grad(a)[0] += acc;
    }
  });
  return out;
}

Var layernorm(Var x, Var gain, Var bias, double eps) {
  require_same_size(x, gain, "layernorm");
  require_same_size(x, bias, "layernorm");
  Tape& t = x.tape();
  const std::size_t n = x.size();
  Var out = t.emit(n, {x, gain, bias});
  const auto xv = x.value(), gv = gain.value(), bv = bias.value();
  double mean = 0.0;
  for (double v : xv) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : xv) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + eps);
  auto y = t.mutable_value(out);
  for (std::size_t i = 0; i < n; ++i) y[i] = (xv[i] - mean) * inv * gv[i] + bv[i];
  t.set_backward(out, [x = x.id(), gn = gain.id(), bs = bias.id(), o = out.id(), mean, inv](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    const auto xv = tp.value(x), gv = tp.value(gn);
    const std::size_t n = g.size();
    if (tp.needs_grad(bs)) {
      auto gb = tp.grad(bs);
      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
    }
    if (tp.needs_grad(gn)) {
      auto gg = tp.grad(gn);
      for (std::size_t i = 0; i < n; ++i) gg[i] += g[i] * (xv[i] - mean) * inv;
    }
    if (tp.needs_grad(x)) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double gh = g[i] * gv[i];
        m1 += gh;
        m2 += gh * (xv[i] - mean) * inv;
      }
      m1 /= static_cast<double>(n);
      m2 /= static_cast<double>(n);
      auto gx = tp.grad(x);
      for (std::size_t i = 0; i < n; ++i) {
        const double xhat = (xv[i] - mean) * inv;
        gx[i] += inv * (g[i] * gv[i] - m1 - xhat * m2);
      }
    }
  });
  return out;
}

Var clamp(Var x, double lo, double hi) {
  if (!(lo < hi)) throw ConfigError("clamp needs lo < hi");
  Tape& t = x.tape();
  Var out = t.emit(x.size(), {x});
  auto y = t.mutable_value(out);
  const auto xv = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = std::min(std::max(xv[i], lo), hi);
    t.record_region(xv[i] < lo ? 0 : (xv[i] < hi ? 1 : 2));
  }
  t.set_backward(out, [x = x.id(), o = out.id(), lo, hi](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    const auto xv = tp.value(x);
    auto gx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (lo <= xv[i] && xv[i] < hi) gx[i] += g[i];
    }
  });
  return out;
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat of nothing");
  Tape& t = parts[0].tape();
  std::size_t total = 0;
  for (const Var& p : parts) total += p.size();
  Var out = t.emit(total, parts);
  auto y = t.mutable_value(out);
  std::size_t off = 0;
  std::vector<NodeId> ids;
  ids.reserve(parts.size());
  for (const Var& p : parts) {
    const auto v = p.value();
    std::copy(v.begin(), v.end(), y.begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
    ids.push_back(p.id());
  }
  t.set_backward(out, [ids = std::move(ids), o = out.id()](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    std::size_t off = 0;
    for (NodeId id : ids) {
      const std::size_t n = tp.size(id);
      if (tp.needs_grad(id)) {
        auto gi = tp.grad(id);
        for (std::size_t i = 0; i < n; ++i) gi[i] += g[off + i];
      }
      off += n;
    }
  });
  return out;
}

Var slice(Var x, std::size_t offset, std::size_t length) {
  if (offset + length > x.size()) throw ConfigError("slice out of range");
  Tape& t = x.tape();
  Var out = t.emit(length, {x});
  const auto xv = x.value();
  std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(offset), length, t.mutable_value(out).begin());
  t.set_backward(out, [x = x.id(), o = out.id(), offset](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    auto gx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[offset + i] += g[i];
  });
  return out;
}

Var gather(Var x, std::span<const std::int64_t> index) {
  Tape& t = x.tape();
  const auto n = static_cast<std::int64_t>(x.size());
  for (auto i : index) {
    if (i >= n) throw ConfigError("gather index out of range");
  }
  Var out = t.emit(index.size(), {x});
  auto y = t.mutable_value(out);
  const auto xv = x.value();
  for (std::size_t i = 0; i < index.size(); ++i) y[i] = index[i] < 0 ? 0.0 : xv[static_cast<std::size_t>(index[i])];
  if (out.needs_grad()) {
    t.set_backward(out, [x = x.id(), o = out.id(), idx = std::vector<std::int64_t>(index.begin(), index.end())](Tape& tp) {
      const auto g = tp.grad_if_any(o);
      auto gx = tp.grad(x);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= 0) gx[static_cast<std::size_t>(idx[i])] += g[i];
      }
    });
  }
  return out;
}

Var linear_combination(std::span<const Var> inputs, std::span<const double> coeff, double constant) {
  if (inputs.size() != coeff.size()) throw ConfigError("linear_combination: one coefficient per input");
  double acc = constant;
  for (std::size_t i = 0; i < inputs.size(); ++i) acc += coeff[i] * inputs[i].value()[0];
  return linearized(inputs, coeff, acc);
}

Var linearized(std::span<const Var> inputs, std::span<const double> coeff, double value) {
  if (inputs.size() != coeff.size()) throw ConfigError("linearized: one coefficient per input");
  if (inputs.empty()) throw ConfigError("linearized needs at least one input; use a constant instead");
  Tape& t = inputs[0].tape();
  for (const Var& v : inputs) {
    if (v.size() != 1) throw ConfigError("linearized inputs must be scalars");
  }
  Var out = t.emit(1, inputs);
  t.mutable_value(out)[0] = value;
  if (out.needs_grad()) {
    std::vector<std::pair<NodeId, double>> terms;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].needs_grad()) terms.emplace_back(inputs[i].id(), coeff[i]);
    }
    t.set_backward(out, [terms = std::move(terms), o = out.id()](Tape& tp) {
      const double g = tp.grad_if_any(o)[0];
      for (const auto& [id, c] : terms) tp.grad(id)[0] += g * c;
    });
  }
  return out;
}

Var complex_magnitude(Var z) {
  require_even(z, "complex_magnitude");
  Tape& t = z.tape();
  const std::size_t n = z.size() / 2;
  Var out = t.emit(n, {z});
  auto y = t.mutable_value(out);
  const auto zv = z.value();
  for (std::size_t i = 0; i < n; ++i) y[i] = std::hypot(zv[i], zv[n + i]);
  t.set_backward(out, [z = z.id(), o = out.id()](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    const auto zv = tp.value(z);
    const auto m = tp.value(o);
    const std::size_t n = g.size();
    auto gz = tp.grad(z);
    for (std::size_t i = 0; i < n; ++i) {
      if (m[i] > 0.0) {
        gz[i] += g[i] * zv[i] / m[i];
        gz[n + i] += g[i] * zv[n + i] / m[i];
      }
    }
  });
  return out;
}

Var complex_phase_split(Var z) {
  require_even(z, "complex_phase_split");
  Tape& t = z.tape();
  const std::size_t n = z.size() / 2;
  Var out = t.emit(2 * n, {z});
  auto y = t.mutable_value(out);
  const auto zv = z.value();
  for (std::size_t i = 0; i < n; ++i) {
    const double m = std::hypot(zv[i], zv[n + i]);
    y[i] = m > 0.0 ? zv[i] / m : 1.0;
    y[n + i] = m > 0.0 ? zv[n + i] / m : 0.0;
  }
  t.set_backward(out, [z = z.id(), o = out.id()](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    const auto zv = tp.value(z);
    const std::size_t n = g.size() / 2;
    auto gz = tp.grad(z);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = zv[i], b = zv[n + i];
      const double m = std::hypot(a, b);
      if (!(m > 0.0)) continue;
      const double m3 = m * m * m;
      const double gr = g[i], gi = g[n + i];
      // d(a/m)/da = b^2/m^3, d(a/m)/db = -ab/m^3, d(b/m)/db = a^2/m^3
      gz[i] += (gr * b * b - gi * a * b) / m3;
      gz[n + i] += (-gr * a * b + gi * a * a) / m3;
    }
  });
  return out;
}

namespace {

// h(r) = log1p(r) / r and q(r) = h'(r) / r.
double compress_h(double r) { return r > 0.0 ? std::log1p(r) / r : 1.0; }

double compress_q(double r) {
  if (r < 1e-3) return -0.5 / r + 2.0 / 3.0 - 0.75 * r + 0.8 * r * r - (5.0 / 6.0) * r * r * r;
  return (r / (1.0 + r) - std::log1p(r)) / (r * r * r);
}

}  // namespace

Var complex_compress(Var z) {
  require_even(z, "complex_compress");
  Tape& t = z.tape();
  const std::size_t n = z.size() / 2;
  Var out = t.emit(2 * n, {z});
  auto y = t.mutable_value(out);
  const auto zv = z.value();
  for (std::size_t i = 0; i < n; ++i) {
    const double h = compress_h(std::hypot(zv[i], zv[n + i]));
    y[i] = h * zv[i];
    y[n + i] = h * zv[n + i];
  }
  t.set_backward(out, [z = z.id(), o = out.id()](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    const auto zv = tp.value(z);
    const std::size_t n = g.size() / 2;
    auto gz = tp.grad(z);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = zv[i], b = zv[n + i];
      const double r = std::hypot(a, b);
      const double h = compress_h(r);
      gz[i] += h * g[i];
      gz[n + i] += h * g[n + i];
      if (r > 0.0) {
        const double qp = compress_q(r) * (a * g[i] + b * g[n + i]);
        gz[i] += qp * a;
        gz[n + i] += qp * b;
      }
    }
  });
  return out;
}

Var fft(Var z) {
  require_even(z, "fft");
  const std::size_t n = z.size() / 2;
  if (!dsp::is_power_of_two(n)) throw ConfigError("fft: length must be a power of two");
  Tape& t = z.tape();
  Var out = t.emit(2 * n, {z});
  const auto zv = z.value();
  dsp::ComplexVec buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = {zv[i], zv[n + i]};
  dsp::fft_plan(n).forward(buf);
  auto y = t.mutable_value(out);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = buf[i].real();
    y[n + i] = buf[i].imag();
  }
  t.set_backward(out, [z = z.id(), o = out.id()](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    const std::size_t n = g.size() / 2;
    // adjoint of the unnormalized DFT is conj(F) = N * IDFT
    dsp::ComplexVec buf(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = {g[i], g[n + i]};
    dsp::fft_plan(n).inverse(buf);
    const double N = static_cast<double>(n);
    auto gz = tp.grad(z);
    for (std::size_t i = 0; i < n; ++i) {
      gz[i] += N * buf[i].real();
      gz[n + i] += N * buf[i].imag();
    }
  });
  return out;
}

Var stack_direct(Var half, std::size_t N) {
  if (half.size() != N) throw ConfigError("stack_direct: planar half spectrum must hold N values");
  Tape& t = half.tape();
  const std::size_t h = N / 2;
  const auto hv = half.value();
  dsp::ComplexVec ws(h);
  for (std::size_t l = 0; l < h; ++l) ws[l] = {hv[l], hv[h + l]};
  const auto w = filterbank::stack_direct(ws, N);
  Var out = t.emit(N, {half});
  std::copy(w.begin(), w.end(), t.mutable_value(out).begin());
  t.set_backward(out, [s = half.id(), o = out.id()](Tape& tp) {
    const auto g = tp.grad_if_any(o);
    const std::size_t N = g.size(), h = N / 2;
    dsp::ComplexVec buf(g.begin(), g.end());
    dsp::fft_plan(N).forward(buf);
    const double two_over_n = 2.0 / static_cast<double>(N);
    auto gs = tp.grad(s);
    gs[0] += buf[0].real() / static_cast<double>(N);
    for (std::size_t l = 1; l < h; ++l) {
      gs[l] += two_over_n * buf[l].real();
      gs[h + l] += two_over_n * buf[l].imag();
    }
  });
  return out;
}

Var scalar_map(Var y, double f, double df, std::uint64_t region) {
  if (y.size() != 1) throw ConfigError("scalar_map needs a scalar input");
  Tape& t = y.tape();
  Var out = t.emit(1, {y});
  t.mutable_value(out)[0] = f;
  t.record_region(region);
  t.set_backward(out, [y = y.id(), o = out.id(), df](Tape& tp) { tp.grad(y)[0] += tp.grad_if_any(o)[0] * df; });
  return out;
}

GradCheck grad_check(const Objective& f, std::span<const std::span<double>> params,
                     std::span<const std::string> names, double step, std::size_t max_per_tensor, double floor) {
  std::vector<std::vector<double>> grads(params.size());
  std::vector<Binding> bindings(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads[i].assign(params[i].size(), 0.0);
    bindings[i] = {params[i], grads[i]};
  }
  Tape tape(true);
  Var loss = f(tape, bindings);
  tape.backward(loss);
  const std::uint64_t base_hash = tape.kink_hash();

  std::vector<Binding> frozen(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) frozen[i] = {params[i], {}};
  Tape probe(false);
  auto evaluate = [&](std::uint64_t& hash) {
    probe.clear();
    const double v = f(probe, frozen).scalar();
    hash = probe.kink_hash();
    return v;
  };

  GradCheck result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].size();
    const std::size_t count = max_per_tensor == 0 ? n : std::min(n, max_per_tensor);
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t j = count == n ? c : c * n / count;
      double& p = params[i][j];
      const double orig = p;
      std::uint64_t hp = 0, hm = 0;
      p = orig + step;
      const double fp = evaluate(hp);
      p = orig - step;
      const double fm = evaluate(hm);
      p = orig;
      if (hp != base_hash || hm != base_hash) {
        ++result.excluded;
        continue;
      }
      const double fd = (fp - fm) / (2.0 * step);
      const double an = grads[i][j];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
      ++result.checked;
      if (rel > result.max_rel_error || !std::isfinite(rel)) {
        result.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        result.worst = (i < names.size() ? names[i] : "tensor" + std::to_string(i)) + "[" + std::to_string(j) + "]";
      }
    }
  }
  return result;
}

}  // namespace mdsaf::ad
