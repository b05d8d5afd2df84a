#include <cmath>

#include "doctest.h"
#include "mdsaf/baselines.hpp"
#include "mdsaf/error.hpp"
#include "mdsaf/harness.hpp"
#include "mdsaf/rng.hpp"
#include "mdsaf/trainer.hpp"
#include "support/oracle_rule.hpp"

using namespace mdsaf;
using namespace mdsaf::trainer;

namespace {

acoustics::AcousticPath path(std::vector<double> taps) { return acoustics::AcousticPath{std::move(taps)}; }

Episode constant_episode(std::size_t n, double d_value) {
  Episode ep;
  ep.x.assign(n, 0.0);
  ep.d.assign(n, d_value);
  ep.v.assign(n, 0.0);
  ep.secondary = path({1.0});
  ep.estimate = path({1.0});
  ep.saturation = acoustics::SaturationSpec::linear();
  return ep;
}

Episode noise_episode(std::size_t n, std::uint64_t seed) {
  auto x = harness::generate_noise("white", n, seed);
  return make_episode(std::move(x), path({0.0, 0.0, 0.8, 0.3, -0.1}), path({0.0, 0.9, -0.3, 0.1}),
                      acoustics::SaturationSpec::linear(), std::numeric_limits<double>::infinity(), seed + 1,
                      Variant::whole_path);
}

}  // namespace

TEST_CASE("variants") {
  CHECK(parse_variant("whole-path") == Variant::whole_path);
  CHECK(parse_variant("main-delay") == Variant::main_delay);
  CHECK(to_string(Variant::main_delay) == "main-delay");
  CHECK_THROWS_AS(parse_variant("md"), ConfigError);

  CHECK(variant_estimate(Variant::whole_path, path({1.0})).taps == std::vector<double>{1.0});
  CHECK(variant_estimate(Variant::main_delay, path({0.0, 0.0, 0.9, 0.1})).taps ==
        std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("both variants agree on a pure-delay path up to the peak gain") {
  auto x = harness::generate_noise("white", 400, 3);
  const auto s = path({0.0, 0.0, 0.0, 0.6});
  const auto a = make_episode(x, path({1.0}), s, acoustics::SaturationSpec::linear(), 30.0, 1, Variant::whole_path);
  const auto b = make_episode(x, path({1.0}), s, acoustics::SaturationSpec::linear(), 30.0, 1, Variant::main_delay);
  dsp::DelayLine ha(4), hb(4);
  for (double v : x) {
    ha.push(v);
    hb.push(v);
    CHECK(acoustics::filtered_reference(ha, a.estimate) ==
          doctest::Approx(0.6 * acoustics::filtered_reference(hb, b.estimate)).epsilon(1e-15));
  }
  CHECK(a.d == b.d);
  CHECK(a.v == b.v);
}

TEST_CASE("estimate_step_size") {
  // one primary of length 4 with unit energy, secondary of length 2 with energy 4
  const std::vector<acoustics::AcousticPath> p{path({1.0, 0.0, 0.0, 0.0})};
  CHECK(estimate_step_size(p, path({2.0, 0.0})) == doctest::Approx(2.0 * 4.0 * 1.0 / (2.0 * 4.0)));
  const std::vector<acoustics::AcousticPath> two{path({1.0, 0.0}), path({0.0, 3.0})};
  CHECK(estimate_step_size(two, path({1.0})) == doctest::Approx(2.0 * 2.0 * 5.0 / 1.0));
  CHECK_THROWS_AS(estimate_step_size({}, path({1.0})), InputError);
  const std::vector<acoustics::AcousticPath> uneven{path({1.0}), path({1.0, 0.0})};
  CHECK_THROWS_AS(estimate_step_size(uneven, path({1.0})), InputError);
}

TEST_CASE("meta config validation") {
  MetaConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.D() == 4);
  CHECK(c.window() == 32);
  c.K = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.mu = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.lr_decay = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.F = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("constant error gives L_M = Q and silence gives zero") {
  const filterbank::FilterBank bank(16, 4);
  const InnerLoop loop(bank, 3, 0.1);
  const auto params = model::init_params(model::Dims::for_filter(16, 4), 1);
  NetworkRule rule(params, nullptr);

  const auto ep = constant_episode(4 * loop.window(), 1.0);
  EpisodeState state(bank, ep, rule.hidden_size());
  for (std::size_t j = 0; j < loop.windows(ep); ++j) {
    ad::Tape tape(false);
    const auto r = loop.run(tape, ep, state, rule);
    CHECK(r.loss.scalar() == doctest::Approx(static_cast<double>(bank.Q())).epsilon(1e-10));
    for (double e : r.e) CHECK(e == 1.0);
  }

  const auto silent = constant_episode(2 * loop.window(), 0.0);
  EpisodeState s2(bank, silent, rule.hidden_size());
  ad::Tape tape(false);
  CHECK(loop.run(tape, silent, s2, rule).loss.scalar() == 0.0);
}

TEST_CASE("window loss equals Q e^2 per sample") {
  const filterbank::FilterBank bank(32, 4);
  const InnerLoop loop(bank, 4, 0.05);
  const auto params = model::init_params(model::Dims::for_filter(32, 4), 2, 0.1);
  NetworkRule rule(params, nullptr);
  const auto ep = noise_episode(3 * loop.window(), 7);
  EpisodeState state(bank, ep, rule.hidden_size());
  for (std::size_t j = 0; j < 3; ++j) {
    ad::Tape tape(false);
    const auto r = loop.run(tape, ep, state, rule);
    double sum = 0.0;
    for (double e : r.e) sum += static_cast<double>(bank.Q()) * e * e;
    CHECK(r.loss.scalar() == doctest::Approx(sum / static_cast<double>(r.e.size())).epsilon(1e-10));
  }
}

TEST_CASE("two windows continue one long window") {
  const std::size_t N = 32, K = 4, F = 3;
  const filterbank::FilterBank bank(N, K);
  const auto params = model::init_params(model::Dims::for_filter(N, 4), 3, 0.2);
  const auto ep = noise_episode(2 * F * bank.D(), 11);

  NetworkRule rule(params, nullptr);
  const InnerLoop shortl(bank, F, 0.05), longl(bank, 2 * F, 0.05);
  EpisodeState a(bank, ep, rule.hidden_size()), b(bank, ep, rule.hidden_size());
  std::vector<double> split;
  for (int j = 0; j < 2; ++j) {
    ad::Tape tape(false);
    const auto r = shortl.run(tape, ep, a, rule);
    split.insert(split.end(), r.e.begin(), r.e.end());
  }
  ad::Tape tape(false);
  const auto whole = longl.run(tape, ep, b, rule).e;
  REQUIRE(whole.size() == split.size());
  for (std::size_t i = 0; i < whole.size(); ++i) CHECK(std::abs(whole[i] - split[i]) <= 1e-12);
  CHECK(a.w == b.w);
  CHECK(a.h == b.h);
}

TEST_CASE("window runs past the episode end") {
  const filterbank::FilterBank bank(16, 4);
  const InnerLoop loop(bank, 4, 0.1);
  testing::OracleRule rule;
  const auto ep = constant_episode(loop.window() - 1, 0.0);
  EpisodeState state(bank, ep, 0);
  ad::Tape tape(false);
  CHECK(loop.windows(ep) == 0);
  CHECK_THROWS_AS(loop.run(tape, ep, state, rule), ConfigError);
}

TEST_CASE("oracle rule reproduces DSNFxLMS") {
  const std::size_t N = 64, K = 8;
  const double mu = 0.05;
  const filterbank::FilterBank bank(N, K);
  const InnerLoop loop(bank, 4, mu);
  const auto ep = noise_episode(40 * loop.window(), 21);

  testing::OracleRule rule;
  EpisodeState state(bank, ep, 0);
  std::vector<double> e_loop;
  for (std::size_t j = 0; j < loop.windows(ep); ++j) {
    ad::Tape tape(false);
    const auto r = loop.run(tape, ep, state, rule);
    e_loop.insert(e_loop.end(), r.e.begin(), r.e.end());
  }

  baselines::DsnfxlmsController ctl(bank, ep.estimate, mu);
  acoustics::Plant plant(path({0.0, 0.0, 0.8, 0.3, -0.1}), ep.secondary, ep.saturation);
  const auto trace = harness::simulate(ctl, plant, ep.x, ep.v, 0);
  REQUIRE(trace.e.size() == e_loop.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < e_loop.size(); ++i) worst = std::max(worst, std::abs(trace.e[i] - e_loop[i]));
  CHECK(worst <= 1e-10);
  for (std::size_t l = 0; l < N; ++l) CHECK(std::abs(ctl.weights()[l] - state.w[l]) <= 1e-10);
}

TEST_CASE("adam examples") {
  const model::Dims d{4, 2, 2};
  model::ModelParams p(d), g(d);
  OptimizerState opt(p, 0.01);
  g.fill(3.0);
  adam_step(opt, p, g);
  for (const auto& t : p.tensors()) {
    for (double v : t.data) CHECK(v == doctest::Approx(-0.01).epsilon(1e-6));
  }

  model::ModelParams q = p;
  OptimizerState fresh(q, 0.01);
  g.fill(0.0);
  CHECK(adam_step(fresh, q, g));
  CHECK(fresh.step == 1);
  for (std::size_t s = 0; s < model::kSlotCount; ++s) CHECK(q.tensors()[s].data == p.tensors()[s].data);

  g[model::enc_b].data[0] = std::nan("");
  CHECK_FALSE(adam_step(fresh, q, g));
  CHECK(fresh.skipped == 1);
  CHECK(fresh.step == 1);
}

TEST_CASE("adam decreases w^2 monotonically") {
  const model::Dims d{4, 2, 2};
  model::ModelParams p(d), g(d);
  p[model::enc_a].data[0] = 1.0;
  OptimizerState opt(p, 0.1);
  double prev = 1.0;
  for (int i = 0; i < 8; ++i) {
    g.fill(0.0);
    g[model::enc_a].data[0] = 2.0 * p[model::enc_a].data[0];
    adam_step(opt, p, g);
    const double f = p[model::enc_a].data[0] * p[model::enc_a].data[0];
    CHECK(f < prev);
    prev = f;
  }
}

TEST_CASE("log_line fields") {
  EpochLog e;
  e.epoch = 0;
  e.val_loss = 1.5;
  e.learning_rate = 1e-4;
  e.wall_seconds = 2.0;
  CHECK(log_line(e) == R"({"epoch":0,"train_L_M":null,"val_L_M":1.5,"lr":0.0001,"wall_seconds":2.0})");
  e.train_loss = 0.5;
  CHECK(log_line(e).find(R"("train_L_M":0.5)") != std::string::npos);
}

TEST_CASE("log header carries the hyperparameters") {
  MetaConfig c;
  c.batch_size = 150;
  const std::string h = log_header(c);
  CHECK(h.find(R"("learning_rate":0.0001)") != std::string::npos);
  CHECK(h.find(R"("lr_decay":0.5)") != std::string::npos);
  CHECK(h.find(R"("patience":3)") != std::string::npos);
  CHECK(h.find(R"("batch_size":150)") != std::string::npos);
  CHECK(h.find(R"("F":8)") != std::string::npos);
}

TEST_CASE("training: errors, identical batch and reproducibility") {
  MetaConfig c;
  c.N = 16;
  c.K = 4;
  c.H = 4;
  c.F = 2;
  c.mu = 0.05;
  c.batch_size = 3;
  c.max_epochs = 2;
  c.learning_rate = 1e-3;
  const auto params = model::init_params(c.dims(), 5, 0.1);

  CHECK_THROWS_AS(train(c, Dataset{}, params), ConfigError);
  CHECK_THROWS_AS(train(c, Dataset{{noise_episode(64, 1)}, {}}, model::init_params({8, 4, 4}, 1)), ConfigError);

  const auto one = noise_episode(8 * c.window(), 31);
  const Dataset single{{one}, {one}};
  const Dataset triple{{one, one, one}, {one}};
  c.max_epochs = 1;
  const auto r1 = train(c, single, params);
  const auto r3 = train(c, triple, params);
  REQUIRE(r1.log.size() == 2);
  CHECK(*r1.log[1].train_loss == doctest::Approx(*r3.log[1].train_loss).epsilon(1e-12));

  c.max_epochs = 2;
  const Dataset data{{noise_episode(160, 1), noise_episode(160, 2), noise_episode(160, 3)}, {noise_episode(160, 4)}};
  const auto a = train(c, data, params);
  const auto b = train(c, data, params);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].val_loss == b.log[i].val_loss);
    CHECK(a.log[i].train_loss.has_value() == b.log[i].train_loss.has_value());
    if (a.log[i].train_loss) CHECK(*a.log[i].train_loss == *b.log[i].train_loss);
  }
  for (std::size_t s = 0; s < model::kSlotCount; ++s) CHECK(a.best.tensors()[s].data == b.best.tensors()[s].data);
  CHECK(a.log[0].epoch == 0);
  CHECK_FALSE(a.log[0].train_loss.has_value());
}

TEST_CASE("evaluate_loss rejects empty input") {
  MetaConfig c;
  c.N = 16;
  c.K = 4;
  c.H = 4;
  const filterbank::FilterBank bank(16, 4);
  CHECK_THROWS_AS(evaluate_loss(c, bank, {}, model::init_params(c.dims(), 1)), ConfigError);
}
