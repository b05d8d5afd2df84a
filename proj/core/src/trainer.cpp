#include "mdsaf/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "mdsaf/error.hpp"
#include "mdsaf/rng.hpp"

namespace mdsaf::trainer {

namespace {

constexpr double kDivergenceBound = 1e8;

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

Variant parse_variant(const std::string& name) {
  if (name == "whole-path") return Variant::whole_path;
  if (name == "main-delay") return Variant::main_delay;
  throw ConfigError("unknown variant '" + name + "' (expected whole-path or main-delay)");
}

std::string to_string(Variant v) { return v == Variant::whole_path ? "whole-path" : "main-delay"; }

acoustics::AcousticPath variant_estimate(Variant variant, const acoustics::AcousticPath& secondary) {
  secondary.validate();
  if (variant == Variant::whole_path) return secondary;
  return acoustics::pure_delay(acoustics::main_delay(secondary));
}

double estimate_step_size(std::span<const acoustics::AcousticPath> primaries, const acoustics::AcousticPath& secondary) {
  if (primaries.empty()) throw InputError("no primary paths");
  secondary.validate();
  auto energy = [](const acoustics::AcousticPath& p) {
    double s = 0.0;
    for (double t : p.taps) s += t * t;
    return s;
  };
  double p2 = 0.0;
  for (const auto& p : primaries) {
    p.validate();
    if (p.length() != primaries.front().length()) throw InputError("primary paths differ in length");
    p2 += energy(p);
  }
  p2 /= static_cast<double>(primaries.size());
  const double s2 = energy(secondary);
  if (!(s2 > 0.0)) throw InputError("secondary path has zero energy");
  return 2.0 * static_cast<double>(primaries.front().length()) * p2 / (static_cast<double>(secondary.length()) * s2);
}

void MetaConfig::validate() const {
  if (K == 0 || K % 2 != 0) throw ConfigError("K must be even and positive");
  if (N == 0 || N % D() != 0) throw ConfigError("N must be a positive multiple of K/2");
  if (H == 0) throw ConfigError("H must be positive");
  if (F == 0) throw ConfigError("F must be at least 1");
  if (!(mu > 0.0)) throw ConfigError("mu must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
  if (threads == 0) throw ConfigError("threads must be positive");
}

void Episode::validate() const {
  if (x.empty()) throw ConfigError("episode has no samples");
  if (d.size() != x.size() || v.size() != x.size()) throw ConfigError("episode signals differ in length");
  secondary.validate();
  estimate.validate();
  saturation.validate();
}

Episode make_episode(std::vector<double> x, const acoustics::AcousticPath& primary,
                     const acoustics::AcousticPath& secondary, acoustics::SaturationSpec saturation, double snr_db,
                     std::uint64_t noise_seed, Variant variant, const acoustics::AcousticPath* switched,
                     std::size_t switch_at) {
  Episode ep;
  ep.d = acoustics::primary_response(x, primary, switched, switch_at);
  ep.v = acoustics::measurement_noise(ep.d, snr_db, noise_seed);
  ep.x = std::move(x);
  ep.secondary = secondary;
  ep.estimate = variant_estimate(variant, secondary);
  ep.saturation = saturation;
  ep.validate();
  return ep;
}

NetworkRule::NetworkRule(model::Dims dims, std::vector<ad::Binding> bindings)
    : dims_(dims), bindings_(std::move(bindings)) {
  dims_.validate();
  if (bindings_.size() != model::kSlotCount) throw ConfigError("network rule needs one binding per tensor");
}

NetworkRule::NetworkRule(const model::ModelParams& params, model::ModelParams* grads)
    : NetworkRule(params.dims(), model::bindings(params, grads)) {}

void NetworkRule::begin_window(ad::Tape& tape) {
  bound_ = model::bind(tape, dims_, std::span<const ad::Binding>(bindings_));
}

ad::Var NetworkRule::gradient(UpdateContext& ctx) {
  if (ctx.features.size() != dims_.M) throw ConfigError("feature size does not match the network input");
  const model::Output out = model::forward(bound_, ctx.features, ctx.hidden);
  ctx.hidden = out.h;
  return out.g;
}

EpisodeState::EpisodeState(const filterbank::FilterBank& bank, const Episode& episode, std::size_t hidden_size)
    : x_hist(std::max(bank.N(), episode.estimate.length())),
      xf_hist(bank.history_length()),
      e_hist(bank.history_length()),
      f_hist(episode.secondary.length()),
      xk_hist(bank.K(), dsp::ComplexDelayLine(bank.Q())),
      w_s(bank.N(), 0.0),
      w(bank.N(), 0.0),
      h(hidden_size, 0.0) {}

InnerLoop::InnerLoop(const filterbank::FilterBank& bank, std::size_t F, double mu) : bank_(&bank), F_(F), mu_(mu) {
  if (F == 0) throw ConfigError("F must be at least 1");
  if (!(mu > 0.0)) throw ConfigError("mu must be positive");
  const std::size_t N = bank.N(), Q = bank.Q(), D = bank.D(), half = bank.bins_per_subband();
  const auto Qi = static_cast<std::int64_t>(Q);

  // [0, ..., 0, e] planar, from a scalar
  loss_pad_.assign(2 * Q, -1);
  loss_pad_[Q - 1] = 0;
  // [0, ..., 0, e_k] planar, from (Re, Im)
  error_pad_.assign(2 * Q, -1);
  error_pad_[Q - 1] = 0;
  error_pad_[2 * Q - 1] = 1;

  // gather source: [x planar (2N), spec_0 (2Q), ..., spec_{D-1} (2Q)]
  feature_index_.assign(2 * N, -1);
  const auto Ni = static_cast<std::int64_t>(N);
  for (std::size_t k = 0; k < D; ++k) {
    const auto bins = filterbank::feature_bins(bank, k);
    const auto base = 2 * Ni + static_cast<std::int64_t>(k) * 2 * Qi;
    for (std::size_t i = 0; i < half; ++i) {
      const std::size_t px = k * Q + i;
      const std::size_t pe = k * Q + half + i;
      const auto b = static_cast<std::int64_t>(bins[i]);
      feature_index_[px] = static_cast<std::int64_t>(px);
      feature_index_[N + px] = static_cast<std::int64_t>(N + px);
      feature_index_[pe] = base + b;
      feature_index_[N + pe] = base + Qi + b;
    }
  }
}

WindowResult InnerLoop::run(ad::Tape& tape, const Episode& episode, EpisodeState& state, UpdateRule& rule) const {
  const filterbank::FilterBank& bank = *bank_;
  const std::size_t N = bank.N(), Q = bank.Q(), D = bank.D(), K = bank.K();
  const std::size_t W = window();
  if (state.n + W > episode.size()) throw ConfigError("window runs past the end of the episode");
  if (state.w_s.size() != N || state.w.size() != N) throw ConfigError("episode state does not match the filter bank");

  rule.begin_window(tape);
  ad::Var w_s = tape.constant(state.w_s);
  ad::Var w = tape.constant(state.w);
  ad::Var hidden;
  if (!state.h.empty()) hidden = tape.constant(state.h);

  const auto& s = episode.secondary.taps;
  std::vector<ad::Var> f_nodes, e_nodes, losses, inputs;
  std::vector<double> coeff;
  f_nodes.reserve(W);
  e_nodes.reserve(W);
  losses.reserve(W);

  WindowResult result;
  result.e.reserve(W);
  std::vector<double> x_planar(2 * N, 0.0);
  std::vector<ad::Var> spectra(D);

  for (std::size_t i = 0; i < W; ++i) {
    const std::size_t n = state.n;
    state.x_hist.push(episode.x[n]);
    state.xf_hist.push(dsp::fir_filter(episode.estimate.taps, state.x_hist));

    const ad::Var y = ad::dot(w, tape.constant(state.x_hist.recent(N)));
    const double yv = y.scalar();
    const double fv = acoustics::saturate(yv, episode.saturation);
    const double dfv = acoustics::saturate_derivative(yv, episode.saturation);
    f_nodes.push_back(ad::scalar_map(y, fv, dfv, dfv == 0.0 ? 1 : 0));
    state.f_hist.push(fv);

    const double e_val = episode.d[n] + dsp::fir_filter(s, state.f_hist) + episode.v[n];
    inputs.clear();
    coeff.clear();
    for (std::size_t j = 0; j < s.size() && j <= i; ++j) {
      inputs.push_back(f_nodes[i - j]);
      coeff.push_back(s[j]);
    }
    const ad::Var e = ad::linearized(inputs, coeff, e_val);
    e_nodes.push_back(e);
    state.e_hist.push(e_val);
    result.e.push_back(e_val);
    ++state.n;

    if (!std::isfinite(e_val) || std::abs(e_val) > kDivergenceBound) {
      state.diverged = true;
      break;
    }
    losses.push_back(ad::sum_squares(ad::fft(ad::gather(e, loss_pad_))));

    if (n % D != 0) continue;

    const auto xs = filterbank::strided(state.xf_hist, D, Q);
    for (std::size_t k = 0; k < K; ++k) state.xk_hist[k].push(filterbank::analyze_one(bank.analysis(k), xs));
    const auto es = filterbank::strided(state.e_hist, D, Q);
    ComplexVec e_k(D);
    for (std::size_t k = 0; k < D; ++k) {
      const auto a = bank.analysis(k);
      e_k[k] = filterbank::analyze_one(a, es);
      std::vector<ad::Var> in;
      std::vector<double> c_re, c_im;
      for (std::size_t q = 0; q < Q && q * D <= i; ++q) {
        in.push_back(e_nodes[i - q * D]);
        c_re.push_back(a[q].real());
        c_im.push_back(a[q].imag());
      }
      const ad::Var re = ad::linearized(in, c_re, e_k[k].real());
      const ad::Var im = ad::linearized(in, c_im, e_k[k].imag());
      spectra[k] = ad::fft(ad::gather(ad::concat({re, im}), error_pad_));
    }

    const auto& plan = dsp::fft_plan(Q);
    ComplexVec buf(Q);
    for (std::size_t k = 0; k < D; ++k) {
      const auto recent = state.xk_hist[k].recent();
      std::copy(recent.begin(), recent.end(), buf.begin());
      plan.forward(buf);
      const auto bins = filterbank::feature_bins(bank, k);
      for (std::size_t b = 0; b < bins.size(); ++b) {
        x_planar[k * Q + b] = buf[bins[b]].real();
        x_planar[N + k * Q + b] = buf[bins[b]].imag();
      }
    }
    std::vector<ad::Var> parts{tape.constant(x_planar)};
    parts.insert(parts.end(), spectra.begin(), spectra.end());
    const ad::Var features = ad::gather(ad::concat(parts), feature_index_);

    UpdateContext ctx{tape, bank, features, state.xk_hist, e_k, hidden};
    const ad::Var g = rule.gradient(ctx);
    if (g.size() != N) throw ConfigError("update rule must return N planar reals");
    if (!all_finite(g.value())) {
      state.diverged = true;
      break;
    }
    w_s = ad::sub(w_s, ad::scale(g, mu_));
    w = ad::stack_direct(w_s, N);
  }

  if (!losses.empty()) {
    result.loss = ad::scale(ad::sum(ad::concat(losses)), 1.0 / static_cast<double>(W));
  } else {
    result.loss = tape.constant(0.0);
  }
  result.diverged = state.diverged || !std::isfinite(result.loss.scalar());
  state.diverged = result.diverged;

  const auto ws = w_s.value();
  state.w_s.assign(ws.begin(), ws.end());
  const auto wv = w.value();
  state.w.assign(wv.begin(), wv.end());
  if (hidden.valid()) {
    const auto hv = hidden.value();
    state.h.assign(hv.begin(), hv.end());
  }
  return result;
}

OptimizerState::OptimizerState(const model::ModelParams& params, double lr)
    : m(params.dims()), v(params.dims()), learning_rate(lr) {}

bool adam_step(OptimizerState& opt, model::ModelParams& params, const model::ModelParams& grads) {
  if (!(params.dims() == grads.dims()) || !(opt.m.dims() == params.dims())) {
    throw ConfigError("optimizer, parameter and gradient shapes differ");
  }
  if (!grads.all_finite()) {
    ++opt.skipped;
    return false;
  }
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  auto p = params.tensors();
  auto m = opt.m.tensors();
  auto v = opt.v.tensors();
  const auto g = grads.tensors();
  for (std::size_t s = 0; s < p.size(); ++s) {
    for (std::size_t i = 0; i < p[s].data.size(); ++i) {
      const double gi = g[s].data[i];
      double& mi = m[s].data[i];
      double& vi = v[s].data[i];
      mi = opt.beta1 * mi + (1.0 - opt.beta1) * gi;
      vi = opt.beta2 * vi + (1.0 - opt.beta2) * gi * gi;
      const double m_hat = mi / c1;
      const double v_hat = vi / c2;
      p[s].data[i] -= opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.epsilon);
    }
  }
  return true;
}

std::string log_line(const EpochLog& log) {
  nlohmann::ordered_json j;
  j["epoch"] = log.epoch;
  j["train_L_M"] = log.train_loss ? nlohmann::ordered_json(*log.train_loss) : nlohmann::ordered_json(nullptr);
  j["val_L_M"] = log.val_loss;
  j["lr"] = log.learning_rate;
  j["wall_seconds"] = log.wall_seconds;
  return j.dump();
}

std::string log_header(const MetaConfig& c) {
  nlohmann::ordered_json j;
  j["config"] = {{"N", c.N},
                 {"K", c.K},
                 {"H", c.H},
                 {"F", c.F},
                 {"mu", c.mu},
                 {"batch_size", c.batch_size},
                 {"learning_rate", c.learning_rate},
                 {"lr_decay", c.lr_decay},
                 {"patience", c.patience},
                 {"max_epochs", c.max_epochs},
                 {"variant", to_string(c.variant)},
                 {"seed", c.seed},
                 {"threads", c.threads}};
  return j.dump();
}

double evaluate_loss(const MetaConfig& config, const filterbank::FilterBank& bank, std::span<const Episode> episodes,
                     const model::ModelParams& params) {
  if (episodes.empty()) throw ConfigError("no episodes to evaluate");
  const InnerLoop loop(bank, config.F, config.mu);
  ad::Tape tape(false);
  NetworkRule rule(params, nullptr);
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& ep : episodes) {
    EpisodeState state(bank, ep, rule.hidden_size());
    const std::size_t windows = loop.windows(ep);
    if (windows == 0) throw ConfigError("episode shorter than one window");
    double sum = 0.0;
    for (std::size_t j = 0; j < windows && !state.diverged; ++j) {
      tape.clear();
      sum += loop.run(tape, ep, state, rule).loss.scalar();
    }
    if (state.diverged) continue;
    total += sum / static_cast<double>(windows);
    ++counted;
  }
  if (counted == 0) return std::numeric_limits<double>::infinity();
  return total / static_cast<double>(counted);
}

namespace {

void add_into(model::ModelParams& acc, const model::ModelParams& g) {
  auto a = acc.tensors();
  const auto b = g.tensors();
  for (std::size_t s = 0; s < a.size(); ++s) {
    for (std::size_t i = 0; i < a[s].data.size(); ++i) a[s].data[i] += b[s].data[i];
  }
}

void scale_by(model::ModelParams& p, double c) {
  for (auto& t : p.tensors()) {
    for (auto& x : t.data) x *= c;
  }
}

struct Worker {
  ad::Tape tape{true};
  model::ModelParams grads;
  double loss = 0.0;
  std::size_t count = 0;
};

}  // namespace

TrainResult train(const MetaConfig& config, const Dataset& data, model::ModelParams params,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (data.train.empty()) throw ConfigError("training set is empty");
  const model::Dims dims = config.dims();
  if (!(params.dims() == dims)) throw ConfigError("parameter dimensions do not match the configuration");
  for (const auto& ep : data.train) ep.validate();

  const filterbank::FilterBank bank(config.N, config.K);
  const InnerLoop loop(bank, config.F, config.mu);
  const std::span<const Episode> val = data.validation.empty() ? std::span<const Episode>(data.train)
                                                               : std::span<const Episode>(data.validation);

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  TrainResult result;
  OptimizerState opt(params, config.learning_rate);
  double best_val = evaluate_loss(config, bank, val, params);
  result.best = params;
  {
    EpochLog log{0, std::nullopt, best_val, opt.learning_rate, elapsed(), 0};
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }

  const std::size_t T = std::min(config.threads, config.batch_size);
  std::vector<Worker> workers(T);
  for (auto& w : workers) w.grads = model::ModelParams(dims);
  model::ModelParams grads(dims);

  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 rng(derive_seed(config.seed, 0x73687566, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double epoch_loss = 0.0;
    std::size_t epoch_count = 0, diverged = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t B = std::min(config.batch_size, order.size() - start);
      std::vector<const Episode*> batch(B);
      std::vector<EpisodeState> states;
      states.reserve(B);
      std::size_t windows = std::numeric_limits<std::size_t>::max();
      for (std::size_t b = 0; b < B; ++b) {
        batch[b] = &data.train[order[start + b]];
        states.emplace_back(bank, *batch[b], dims.H);
        windows = std::min(windows, loop.windows(*batch[b]));
      }
      if (windows == 0) throw ConfigError("episode shorter than one window");

      for (std::size_t j = 0; j < windows; ++j) {
        auto work = [&](std::size_t t) {
          Worker& wk = workers[t];
          wk.grads.fill(0.0);
          wk.loss = 0.0;
          wk.count = 0;
          NetworkRule rule(params, &wk.grads);
          for (std::size_t b = t; b < B; b += T) {
            if (states[b].diverged) continue;
            wk.tape.clear();
            const WindowResult r = loop.run(wk.tape, *batch[b], states[b], rule);
            if (r.diverged) continue;
            wk.tape.backward(r.loss);
            wk.loss += r.loss.scalar();
            ++wk.count;
          }
        };
        if (T == 1) {
          work(0);
        } else {
          std::vector<std::jthread> pool;
          for (std::size_t t = 0; t < T; ++t) pool.emplace_back(work, t);
        }
        grads.fill(0.0);
        std::size_t count = 0;
        for (const auto& wk : workers) {
          add_into(grads, wk.grads);
          count += wk.count;
          epoch_loss += wk.loss;
        }
        epoch_count += count;
        if (count == 0) break;
        scale_by(grads, 1.0 / static_cast<double>(count));
        adam_step(opt, params, grads);
      }
      for (const auto& st : states) diverged += st.diverged ? 1 : 0;
    }
    result.diverged += diverged;

    const double val_loss = evaluate_loss(config, bank, val, params);
    EpochLog log{epoch, epoch_count > 0 ? epoch_loss / static_cast<double>(epoch_count) : std::nan(""),
                 val_loss, opt.learning_rate, elapsed(), diverged};
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    if (val_loss < best_val) {
      best_val = val_loss;
      result.best = params;
      result.best_epoch = epoch;
      stale = 0;
    } else {
      if (val_loss > best_val) opt.learning_rate *= config.lr_decay;
      if (++stale >= config.patience) break;
    }
  }
  result.skipped_steps = opt.skipped;
  return result;
}

}  // namespace mdsaf::trainer
