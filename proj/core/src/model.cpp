#include "mdsaf/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "mdsaf/error.hpp"
#include "mdsaf/rng.hpp"

namespace mdsaf::model {

namespace {

constexpr std::array<const char*, kSlotCount> kNames = {
    "encoder.weight", "encoder.bias", "encoder.prelu",
    "gru.weight_ih", "gru.bias_ih", "gru.weight_hh", "gru.bias_hh",
    "ln1.gain", "ln1.bias",
    "embed.q", "embed.k", "embed.v",
    "attn.q.weight", "attn.q.bias", "attn.k.weight", "attn.k.bias", "attn.v.weight", "attn.v.bias",
    "ln2.gain", "ln2.bias",
    "ff1.weight", "ff1.bias", "ff.prelu", "ff2.weight", "ff2.bias",
    "dec1.weight", "dec1.bias", "dec.prelu", "dec2.weight", "dec2.bias",
};

struct Shape {
  std::size_t rows;
  std::size_t cols;
};

std::array<Shape, kSlotCount> shapes(const Dims& d) {
  const std::size_t M = d.M, H = d.H, Z = d.Z;
  return {{
      {H, M}, {H, 1}, {1, 1},
      {3 * H, H}, {3 * H, 1}, {3 * H, H}, {3 * H, 1},
      {H, 1}, {H, 1},
      {H, 1}, {H, 1}, {H, 1},
      {H, H}, {H, 1}, {H, H}, {H, 1}, {H, H}, {H, 1},
      {H, 1}, {H, 1},
      {4 * H, H}, {4 * H, 1}, {1, 1}, {H, 4 * H}, {H, 1},
      {Z, H}, {Z, 1}, {1, 1}, {2 * Z, Z}, {2 * Z, 1},
  }};
}

}  // namespace

void Dims::validate() const {
  if (M == 0 || H == 0 || Z == 0) throw ConfigError("model dimensions must be positive");
  if (M % 2 != 0) throw ConfigError("model input size M must be even (planar complex)");
}

ModelParams::ModelParams(Dims dims) : dims_(dims) {
  const auto s = shapes(dims);
  tensors_.resize(kSlotCount);
  for (std::size_t i = 0; i < kSlotCount; ++i) {
    tensors_[i].name = kNames[i];
    tensors_[i].rows = s[i].rows;
    tensors_[i].cols = s[i].cols;
    tensors_[i].data.assign(s[i].rows * s[i].cols, 0.0);
  }
}

const Tensor& ModelParams::by_name(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw ConfigError("no parameter tensor named " + std::string(name));
}

std::size_t ModelParams::param_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

void ModelParams::fill(double value) {
  for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), value);
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors_) {
    for (double v : t.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

ModelParams init_params(Dims dims, std::uint64_t seed, double output_scale) {
  dims.validate();
  if (!(output_scale > 0.0)) throw ConfigError("output scale must be positive");
  ModelParams p(dims);
  SplitMix64 rng(seed, 0x696e6974ULL);
  auto uniform = [&](Slot s, double bound) {
    for (auto& v : p[s].data) v = rng.uniform(-bound, bound);
  };
  auto linear = [&](Slot w, Slot b) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(p[w].cols));
    uniform(w, bound);
    uniform(b, bound);
  };
  linear(enc_w, enc_b);
  linear(gru_wih, gru_bih);
  {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims.H));
    uniform(gru_whh, bound);
    uniform(gru_bhh, bound);
  }
  linear(q_w, q_b);
  linear(k_w, k_b);
  linear(v_w, v_b);
  linear(ff1_w, ff1_b);
  linear(ff2_w, ff2_b);
  linear(dec1_w, dec1_b);
  linear(dec2_w, dec2_b);
  for (Slot s : {dec2_w, dec2_b}) {
    for (auto& v : p[s].data) v *= output_scale;
  }
  for (Slot s : {enc_a, ff_a, dec_a}) p[s].data[0] = 0.25;
  for (Slot s : {ln1_g, ln2_g}) std::fill(p[s].data.begin(), p[s].data.end(), 1.0);
  return p;
}

Cost count_params_flops(Dims d) {
  const std::size_t M = d.M, H = d.H, Z = d.Z;
  Cost c;
  const auto s = shapes(d);
  for (const auto& sh : s) c.params += sh.rows * sh.cols;
  c.flops = M * H           // encoder
            + 6 * H * H     // GRU input and hidden maps
            + 3 * H * H     // q, k, v
            + H             // q . k
            + 8 * H * H     // feedforward H -> 4H -> H
            + H * Z         // decoder first layer
            + Z * 2 * Z;    // decoder output layer
  if (M == 0 || H == 0 || Z == 0) c = {};
  return c;
}

Cost count_params_flops(const ModelParams& params) {
  Cost c = count_params_flops(params.dims());
  c.params = params.param_count();
  return c;
}

Complex compress_input(Complex z) {
  const double r = std::hypot(z.real(), z.imag());
  const double h = r > 0.0 ? std::log1p(r) / r : 1.0;
  return {h * z.real(), h * z.imag()};
}

namespace {
// log is taken on [e^-20, e^20] and the amplitude clamped to [0, 2], which
// equals clamping |g| to [e^-10, e^10] but gives exact 0 and 2 at the ends
const double kLogLo = std::exp(-20.0);
const double kLogHi = std::exp(20.0);
}  // namespace

Complex constrain_gradient(Complex g) {
  const double m = std::hypot(g.real(), g.imag());
  const double amp = std::clamp(std::log(std::clamp(m, kLogLo, kLogHi)) * 0.1 + 1.0, 0.0, 2.0);
  const double c = m > 0.0 ? g.real() / m : 1.0;
  const double s = m > 0.0 ? g.imag() / m : 0.0;
  return {amp * c, amp * s};
}

ComplexVec constrain_gradient(std::span<const Complex> g) {
  ComplexVec out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = constrain_gradient(g[i]);
  return out;
}

std::vector<ad::Binding> bindings(const ModelParams& params, ModelParams* grads) {
  if (grads && grads->dims() != params.dims()) throw ConfigError("gradient buffer dims differ from params");
  std::vector<ad::Binding> out(kSlotCount);
  for (std::size_t i = 0; i < kSlotCount; ++i) {
    out[i].value = params.tensors()[i].data;
    if (grads) out[i].grad = grads->tensors()[i].data;
  }
  return out;
}

Bound bind(ad::Tape& tape, Dims dims, std::span<const ad::Binding> binds) {
  if (binds.size() != kSlotCount) throw ConfigError("expected one binding per parameter tensor");
  const auto s = shapes(dims);
  Bound b;
  b.dims = dims;
  for (std::size_t i = 0; i < kSlotCount; ++i) b.v[i] = tape.parameter(binds[i], s[i].rows, s[i].cols);
  return b;
}

Bound bind(ad::Tape& tape, const ModelParams& params, ModelParams* grads) {
  const auto b = bindings(params, grads);
  return model::bind(tape, params.dims(), std::span<const ad::Binding>(b));
}

ad::Var attention(const Bound& p, ad::Var u) {
  const ad::Var q = ad::affine(p[q_w], p[q_b], ad::mul(u, ad::sigmoid(p[q_r])));
  const ad::Var k = ad::affine(p[k_w], p[k_b], ad::mul(u, ad::sigmoid(p[k_r])));
  const ad::Var v = ad::affine(p[v_w], p[v_b], ad::mul(u, ad::sigmoid(p[v_r])));
  const ad::Var weight = ad::softmax(ad::dot(q, k));
  return ad::mul(v, weight);
}

ad::Var constrain(ad::Var g) {
  const ad::Var amp =
      ad::clamp(ad::affine_const(ad::log(ad::clamp(ad::complex_magnitude(g), kLogLo, kLogHi)), 0.1, 1.0), 0.0, 2.0);
  return ad::mul(ad::concat({amp, amp}), ad::complex_phase_split(g));
}

Output forward(const Bound& p, ad::Var features, ad::Var h) {
  const Dims& d = p.dims;
  if (features.size() != d.M) throw ConfigError("feature vector does not match model input size M");
  if (h.size() != d.H) throw ConfigError("hidden state does not match model width H");
  const std::size_t H = d.H;

  const ad::Var x = ad::prelu(ad::affine(p[enc_w], p[enc_b], ad::complex_compress(features)), p[enc_a]);

  // GRU: r, z, n gates stacked in the rows of W_ih and W_hh
  const ad::Var gi = ad::affine(p[gru_wih], p[gru_bih], x);
  const ad::Var gh = ad::affine(p[gru_whh], p[gru_bhh], h);
  const ad::Var r = ad::sigmoid(ad::add(ad::slice(gi, 0, H), ad::slice(gh, 0, H)));
  const ad::Var z = ad::sigmoid(ad::add(ad::slice(gi, H, H), ad::slice(gh, H, H)));
  const ad::Var n = ad::tanh(ad::add(ad::slice(gi, 2 * H, H), ad::mul(r, ad::slice(gh, 2 * H, H))));
  const ad::Var h_next = ad::add(n, ad::mul(z, ad::sub(h, n)));

  const ad::Var a = ad::add(h_next, attention(p, ad::layernorm(h_next, p[ln1_g], p[ln1_b])));
  const ad::Var ff = ad::affine(p[ff2_w], p[ff2_b],
                                ad::prelu(ad::affine(p[ff1_w], p[ff1_b], ad::layernorm(a, p[ln2_g], p[ln2_b])), p[ff_a]));
  const ad::Var block = ad::add(a, ff);

  const ad::Var hidden = ad::prelu(ad::affine(p[dec1_w], p[dec1_b], block), p[dec_a]);
  const ad::Var g = ad::affine(p[dec2_w], p[dec2_b], hidden);
  return {constrain(g), h_next};
}

Inference::Inference(const ModelParams& params)
    : params_(&params), h_(params.dims().H, 0.0), out_(params.dims().Z) {
  params.dims().validate();
}

const ComplexVec& Inference::step(std::span<const double> features_planar) {
  tape_.clear();
  const Bound b = model::bind(tape_, *params_);
  const Output o = forward(b, tape_.constant(features_planar), tape_.constant(h_));
  const auto h = o.h.value();
  std::copy(h.begin(), h.end(), h_.begin());
  const auto g = o.g.value();
  const std::size_t Z = out_.size();
  for (std::size_t i = 0; i < Z; ++i) out_[i] = {g[i], g[Z + i]};
  return out_;
}

void Inference::reset() { std::fill(h_.begin(), h_.end(), 0.0); }

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::filesystem::path blob_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".bin";
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const CheckpointMeta& meta) {
  nlohmann::json manifest;
  manifest["format"] = "mdsaf-checkpoint";
  manifest["op_set_version"] = kOpSetVersion;
  manifest["dims"] = {{"M", params.dims().M}, {"H", params.dims().H}, {"Z", params.dims().Z}};
  manifest["seed"] = meta.seed;
  manifest["N"] = meta.N;
  manifest["K"] = meta.K;
  manifest["mu"] = meta.mu;
  manifest["variant"] = meta.variant;
  manifest["blob"] = blob_path(path).filename().string();
  nlohmann::json table = nlohmann::json::array();
  for (const auto& t : params.tensors()) {
    table.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  }
  manifest["tensors"] = table;

  std::ofstream blob(blob_path(path), std::ios::binary);
  if (!blob) throw InputError("cannot write checkpoint blob " + blob_path(path).string());
  for (const auto& t : params.tensors()) {
    const std::uint64_t n = t.size();
    blob.write(reinterpret_cast<const char*>(&n), sizeof n);
    blob.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(n * sizeof(double)));
  }
  if (!blob) throw InputError("failed writing checkpoint blob");

  std::ofstream out(path);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  out << manifest.dump(2) << '\n';
}

ModelParams load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  try {
    if (manifest.at("format") != "mdsaf-checkpoint") throw InputError("not an mdsaf checkpoint");
    if (manifest.at("op_set_version").get<int>() != kOpSetVersion) {
      throw ConfigError("checkpoint op-set version differs from this build");
    }
    const Dims dims{manifest.at("dims").at("M").get<std::size_t>(), manifest.at("dims").at("H").get<std::size_t>(),
                    manifest.at("dims").at("Z").get<std::size_t>()};
    dims.validate();
    ModelParams params(dims);
    const auto& table = manifest.at("tensors");
    if (table.size() != kSlotCount) throw ConfigError("checkpoint tensor table has the wrong length");

    std::ifstream blob(path.parent_path() / manifest.at("blob").get<std::string>(), std::ios::binary);
    if (!blob) throw InputError("cannot open checkpoint blob");
    for (std::size_t i = 0; i < kSlotCount; ++i) {
      Tensor& t = params.tensors()[i];
      if (table[i].at("name") != t.name || table[i].at("rows").get<std::size_t>() != t.rows ||
          table[i].at("cols").get<std::size_t>() != t.cols) {
        throw ConfigError("checkpoint tensor " + t.name + " is inconsistent with its dims");
      }
      std::uint64_t n = 0;
      blob.read(reinterpret_cast<char*>(&n), sizeof n);
      if (!blob || n != t.size()) throw InputError("checkpoint blob does not match tensor " + t.name);
      blob.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * sizeof(double)));
      if (!blob) throw InputError("truncated checkpoint blob");
    }
    if (meta) {
      meta->seed = manifest.at("seed").get<std::uint64_t>();
      meta->N = manifest.at("N").get<std::size_t>();
      meta->K = manifest.at("K").get<std::size_t>();
      meta->mu = manifest.at("mu").get<double>();
      meta->variant = manifest.at("variant").get<std::string>();
    }
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace mdsaf::model
