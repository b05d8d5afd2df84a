#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mdsaf/baselines.hpp"
#include "mdsaf/config.hpp"
#include "mdsaf/error.hpp"
#include "mdsaf/harness.hpp"
#include "mdsaf/rng.hpp"

using namespace mdsaf;
using namespace mdsaf::harness;
namespace fs = std::filesystem;

namespace {

double rms(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

acoustics::EpisodeTrace trace_of(std::vector<double> d, std::vector<double> e) {
  acoustics::EpisodeTrace t;
  for (std::size_t i = 0; i < d.size(); ++i) t.push(0.0, d[i], 0.0, 0.0, e[i]);
  return t;
}

Scenario small_scenario() {
  Scenario sc;
  sc.source = "white";
  sc.duration = 0.25;
  sc.primary = acoustics::AcousticPath{{0.0, 0.0, 0.0, 0.7, 0.2}};
  sc.secondary = acoustics::AcousticPath{{0.0, 1.0, 0.2}};
  return sc;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MDSAF_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("noise generators") {
  const auto w = generate_noise("white", 16000, 1);
  CHECK(rms(w) == doctest::Approx(1.0).epsilon(0.03));
  CHECK(generate_noise("white", 16000, 1) == w);
  CHECK(generate_noise("white", 16000, 2) != w);

  const auto tone = generate_noise("tone:500", 16000, 1);
  CHECK(rms(tone) == doctest::Approx(1.0).epsilon(1e-9));
  const auto band = generate_noise("band:100:2000", 32000, 3);
  CHECK(rms(band) == doctest::Approx(1.0).epsilon(1e-12));
  const auto spec = psd(band, 1024);
  double in_band = 0.0, out_band = 0.0;
  for (std::size_t k = 0; k < spec.hz.size(); ++k) {
    const double p = std::pow(10.0, spec.db[k] / 10.0);
    if (spec.hz[k] > 150 && spec.hz[k] < 1950) in_band += p;
    if (spec.hz[k] > 2500) out_band += p;
  }
  CHECK(out_band < 1e-3 * in_band);

  CHECK_THROWS_AS(generate_noise("white", 0, 1), ConfigError);
  CHECK_THROWS_AS(generate_noise("tone:9000", 10, 1), ConfigError);
  CHECK_THROWS_AS(generate_noise("band:2000:100", 10, 1), ConfigError);
  CHECK_THROWS_AS(generate_noise("tone:abc", 10, 1), ConfigError);
  CHECK_THROWS_AS(generate_noise("/no/such/file.wav", 10, 1), InputError);
}

TEST_CASE("nmse examples") {
  const std::vector<double> d{1.0, -2.0, 0.5, 3.0};
  std::vector<double> tenth(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) tenth[i] = d[i] / 10.0;
  const std::vector<acoustics::EpisodeTrace> same{trace_of(d, d)};
  const std::vector<acoustics::EpisodeTrace> quiet{trace_of(d, tenth)};
  CHECK(nmse(same) == doctest::Approx(0.0));
  CHECK(nmse(quiet) == doctest::Approx(-20.0).epsilon(1e-12));
  const std::vector<acoustics::EpisodeTrace> zero{trace_of({0.0, 0.0}, {1.0, 1.0})};
  CHECK_THROWS_AS(nmse(zero), InputError);
  CHECK_THROWS_AS(nmse({}), InputError);
}

TEST_CASE("psd examples") {
  const auto tone = generate_noise("tone:1000", 16384, 1);
  const auto p = psd(tone);
  std::size_t peak = 0;
  for (std::size_t k = 0; k < p.db.size(); ++k) {
    if (p.db[k] > p.db[peak]) peak = k;
  }
  CHECK(p.hz[peak] == doctest::Approx(1000.0));

  const std::vector<double> zeros(2048, 0.0);
  for (double v : psd(zeros).db) CHECK(v == -200.0);

  const auto white = generate_noise("white", 60 * 16000, 9);
  const auto pw = psd(white);
  for (std::size_t k = 1; k + 1 < pw.db.size(); ++k) CHECK(std::abs(pw.db[k] - pw.db[pw.db.size() / 2]) < 3.0);

  CHECK_THROWS_AS(psd(zeros, 1000), ConfigError);
  CHECK_THROWS_AS(psd(std::vector<double>(100, 0.0), 1024), InputError);
}

TEST_CASE("timing budget and report") {
  CHECK(update_budget_ms(16, 0) == doctest::Approx(1.0));
  CHECK(update_budget_ms(16, 1) == doctest::Approx(2.0));
  const auto r = make_timing_report({0.5, 0.2, 3.0, 0.4}, 1.0);
  CHECK(r.median_ms == doctest::Approx(0.45));
  CHECK(r.max_ms == 3.0);
  CHECK(r.mean_ms == doctest::Approx(1.025));
  CHECK(r.satisfied);
  CHECK_FALSE(make_timing_report({2.0, 2.0, 2.0}, 1.0).satisfied);
  const auto j = nlohmann::json::parse(to_json(r));
  CHECK(j.at("budget_ms") == 1.0);
  CHECK(j.at("satisfied") == true);
}

TEST_CASE("skip rule") {
  for (std::size_t n = 0; n < 64; ++n) {
    const Step a = make_step(n, 4, 0);
    CHECK(a.scheduled == (n % 4 == 0));
    CHECK(a.execute == a.scheduled);
    const Step b = make_step(n, 4, 1);
    CHECK(b.scheduled == a.scheduled);
    CHECK(b.execute == (n % 8 == 0));
  }
}

TEST_CASE("frozen controller gives exactly 0 dB") {
  auto sc = small_scenario();
  const auto r = run_episode([](const acoustics::AcousticPath&) { return std::make_unique<FrozenController>(32); }, sc);
  CHECK(r.metrics.nmse_db == 0.0);
  CHECK(r.updates == 0);
}

TEST_CASE("skip factor halves the update count") {
  auto sc = small_scenario();
  const filterbank::FilterBank bank(32, 4);
  auto factory = [&](const acoustics::AcousticPath& est) {
    return std::make_unique<baselines::DsnfxlmsController>(bank, est, 0.05);
  };
  const auto a = run_episode(factory, sc);
  sc.skip = 1;
  const auto b = run_episode(factory, sc);
  CHECK(a.updates == sc.samples() / 2);
  CHECK(b.updates == sc.samples() / 4);
}

TEST_CASE("path switch happens at half the duration") {
  auto sc = small_scenario();
  sc.switched_primary = acoustics::AcousticPath{{0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.5}};
  const auto r = run_episode([](const acoustics::AcousticPath&) { return std::make_unique<FrozenController>(8); }, sc);
  const auto& t = r.traces.front();
  const std::size_t half = sc.samples() / 2;
  const auto x = generate_noise(sc.source, sc.samples(), derive_seed(sc.seed, 0));
  CHECK(t.d[half - 1] == doctest::Approx(0.7 * x[half - 4] + 0.2 * x[half - 5]));
  CHECK(t.d[half] == doctest::Approx(-1.5 * x[half - 6]));
}

TEST_CASE("more runs reduce the spread of mean NMSE") {
  // with w = 0 the NMSE measures the measurement noise, whose estimate
  // tightens as runs are pooled
  auto sc = small_scenario();
  sc.duration = 0.05;
  sc.snr_db = 10.0;
  auto factory = [](const acoustics::AcousticPath&) { return std::make_unique<FrozenController>(16); };
  auto spread = [&](std::size_t runs) {
    std::vector<double> v;
    for (std::uint64_t s = 1; s <= 12; ++s) {
      sc.runs = runs;
      sc.seed = 1000 + s;
      v.push_back(run_episode(factory, sc).metrics.nmse_db);
    }
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s2 = 0.0;
    for (double x : v) s2 += (x - m) * (x - m);
    return std::sqrt(s2 / static_cast<double>(v.size() - 1));
  };
  const double s1 = spread(1), s5 = spread(5), s25 = spread(25);
  MESSAGE("spread R=1 " << s1 << ", R=5 " << s5 << ", R=25 " << s25);
  CHECK(s25 < s1);
}

TEST_CASE("scenario validation and digest") {
  auto sc = small_scenario();
  CHECK_NOTHROW(sc.validate());
  const auto d1 = sc.digest();
  CHECK(d1 == small_scenario().digest());
  sc.snr_db = 5.0;
  CHECK(sc.digest() != d1);
  sc.runs = 0;
  CHECK_THROWS_AS(sc.validate(), ConfigError);
  sc = small_scenario();
  sc.duration = 0.0;
  CHECK_THROWS_AS(sc.validate(), ConfigError);
}

TEST_CASE("config parsing") {
  const auto c = Config::parse("# comment\nN = 64\nvariant = \"main-delay\"\neval.snr_db = inf # note\nlist = 1, 2,3\n");
  CHECK(c.get_size("N", 0) == 64);
  CHECK(c.get_string("variant", "") == "main-delay");
  CHECK(std::isinf(c.get_double("eval.snr_db", 0.0)));
  CHECK(c.get_doubles("list", {}) == std::vector<double>{1.0, 2.0, 3.0});
  CHECK_NOTHROW(c.check_consumed());

  const auto typo = Config::parse("nn = 3\n");
  CHECK_THROWS_AS(typo.check_consumed(), ConfigError);
  CHECK_THROWS_AS(Config::parse("[section]\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("N\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("a = x\n").get_double("a", 0.0), ConfigError);

  Config o = Config::parse("a = 1\n");
  o.set(std::string_view("a=2"));
  CHECK(o.get_size("a", 0) == 2);
}

TEST_CASE("dataset manifest") {
  DatasetRequest req;
  req.sources = {"white", "band:100:2000"};
  req.count = 1;
  const auto one = make_dataset(req);
  REQUIRE(one.entries.size() == 1);
  CHECK(one.entries[0].position < 9);

  req.count = 40;
  const auto a = make_dataset(req);
  const auto b = make_dataset(req);
  std::size_t val = 0;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].seed == b.entries[i].seed);
    CHECK(a.entries[i].source == b.entries[i].source);
    val += a.entries[i].validation ? 1 : 0;
  }
  CHECK(val == 4);

  const auto dir = fs::temp_directory_path() / "mdsaf_test_manifest";
  fs::create_directories(dir);
  write_manifest(dir / "m.json", a);
  const auto back = read_manifest(dir / "m.json");
  REQUIRE(back.entries.size() == a.entries.size());
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(back.entries[i].snr_db == a.entries[i].snr_db);
    CHECK(back.entries[i].eta == a.entries[i].eta);
    CHECK(back.entries[i].position == a.entries[i].position);
    CHECK(back.entries[i].validation == a.entries[i].validation);
  }
  fs::remove_all(dir);

  req.sources = {};
  CHECK_THROWS_AS(make_dataset(req), InputError);
}

TEST_CASE("command line exit codes and outputs") {
  const fs::path dir = fs::temp_directory_path() / "mdsaf_test_cli";
  fs::remove_all(dir);
  const std::string wd = "--set work_dir=" + dir.string();
  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("eval --bogus") == 1);
  CHECK(run_cli("eval " + wd + " --set eval.nonsense=1") == 1);
  CHECK(run_cli("eval --config /no/such/file.toml") == 1);

  REQUIRE(run_cli("gen-rirs " + wd + " --set rirs.primary_length=256 --set rirs.secondary_length=128") == 0);
  CHECK(fs::exists(dir / "paths" / "secondary.rir"));

  const std::string tone = "--set eval.source=tone:500 --set eval.duration=1 --set N=256 --set eval.out_dir=" +
                           (dir / "eval").string();
  REQUIRE(run_cli("eval " + wd + " --set eval.controller=nfxlms " + tone) == 0);
  const auto metrics = read_file(dir / "eval" / "metrics.csv");
  CHECK(metrics.rfind("controller,scenario,run,nmse_db\n", 0) == 0);
  CHECK(read_file(dir / "eval" / "psd.csv").rfind("hz,db_off,db_on\n", 0) == 0);

  REQUIRE(run_cli("make-dataset " + wd + " --set dataset.count=4 --set dataset.clip_seconds=0.1") == 0);
  REQUIRE(run_cli("train " + wd +
                  " --set N=16 --set K=4 --set H=4 --set F=2 --set mu=0.01 --set train.max_epochs=1") == 0);
  CHECK(fs::exists(dir / "model.ckpt"));
  CHECK(run_cli("eval " + wd + " --set eval.controller=mdsaf --set eval.duration=0.2") == 0);

  REQUIRE(run_cli("bench " + wd + " --set bench.controller=mdsaf --set bench.iterations=100") == 0);
  const auto timing = nlohmann::json::parse(read_file(dir / "timing.json"));
  CHECK(timing.contains("median_ms"));
  CHECK(timing.contains("params"));
  CHECK(run_cli("bench " + wd + " --set bench.controller=mdsaf --set bench.iterations=10") == 1);
  fs::remove_all(dir);
}
