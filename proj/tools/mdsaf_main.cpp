// mdsaf: command line front end.
//
//   mdsaf gen-rirs      --config run.toml [--set key=value ...]
//   mdsaf make-dataset  --config run.toml
//   mdsaf train         --config run.toml
//   mdsaf eval          --config run.toml
//   mdsaf bench         --config run.toml
//
// Exit codes: 0 ok, 1 bad input or configuration, 2 invariant violation.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mdsaf/baselines.hpp"
#include "mdsaf/config.hpp"
#include "mdsaf/error.hpp"
#include "mdsaf/harness.hpp"
#include "mdsaf/model.hpp"
#include "mdsaf/trainer.hpp"

namespace fs = std::filesystem;
using namespace mdsaf;

namespace {

const std::vector<std::string> kSections{"rirs.", "dataset.", "train.", "eval.", "bench."};

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config c = path.empty() ? Config{} : Config::load(path);
  for (const auto& o : overrides) c.set(std::string_view(o));
  return c;
}

// Unknown keys are errors, except keys that belong to other subcommands.
void finish(const Config& c, const std::string& own) {
  c.get_string("mu", "");  // shared; only train reads it
  for (const auto& s : kSections) {
    if (s != own) c.ignore_prefix(s);
  }
  c.check_consumed();
}

acoustics::Vec3 get_vec3(const Config& c, const std::string& key, acoustics::Vec3 fallback) {
  const auto v = c.get_doubles(key, {fallback.x, fallback.y, fallback.z});
  if (v.size() != 3) throw ConfigError("key '" + key + "' needs three numbers");
  return {v[0], v[1], v[2]};
}

fs::path work_dir(const Config& c) { return c.get_string("work_dir", "run"); }

struct Shared {
  std::size_t N, K, H, F;
  trainer::Variant variant;
};

Shared shared(const Config& c) {
  Shared s{c.get_size("N", 256), c.get_size("K", 8), c.get_size("H", 32), c.get_size("F", 8),
           trainer::parse_variant(c.get_string("variant", "whole-path"))};
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

// gen-rirs -------------------------------------------------------------------

int gen_rirs(const Config& c) {
  acoustics::RoomSpec room;
  room.dimensions = get_vec3(c, "rirs.room", room.dimensions);
  room.speaker_pos = get_vec3(c, "rirs.speaker", room.speaker_pos);
  room.error_mic_pos = get_vec3(c, "rirs.error_mic", room.error_mic_pos);
  room.t60 = c.get_double("rirs.t60", room.t60);
  room.sound_speed = c.get_double("rirs.sound_speed", room.sound_speed);
  const std::size_t lp = c.get_size("rirs.primary_length", 2048);
  const std::size_t ls = c.get_size("rirs.secondary_length", 1024);
  const fs::path dir = work_dir(c) / "paths";
  finish(c, "rirs.");

  const auto paths = harness::generate_paths(room, lp, ls);
  harness::save_paths(dir, paths);
  std::printf("wrote %zu primary paths and 1 secondary path to %s (suggested mu %.4g)\n", paths.primary.size(),
              dir.string().c_str(), trainer::estimate_step_size(paths.primary, paths.secondary));
  return 0;
}

// make-dataset ---------------------------------------------------------------

int make_dataset(const Config& c) {
  harness::DatasetRequest req;
  req.sources = c.get_strings("dataset.sources", {"white"});
  req.snr_db = c.get_doubles("dataset.snr_db", req.snr_db);
  req.eta = c.get_doubles("dataset.eta", req.eta);
  req.clip_seconds = c.get_double("dataset.clip_seconds", req.clip_seconds);
  req.count = c.get_size("dataset.count", req.count);
  req.validation_fraction = c.get_double("dataset.validation_fraction", req.validation_fraction);
  req.seed = c.get_size("dataset.seed", req.seed);
  const fs::path out = work_dir(c) / "manifest.json";
  finish(c, "dataset.");

  const auto manifest = harness::make_dataset(req);
  fs::create_directories(out.parent_path());
  harness::write_manifest(out, manifest);
  std::size_t val = 0;
  for (const auto& e : manifest.entries) val += e.validation ? 1 : 0;
  std::printf("wrote %s: %zu train, %zu validation\n", out.string().c_str(), manifest.entries.size() - val, val);
  return 0;
}

// train ----------------------------------------------------------------------

double resolve_mu(const Config& c, const std::string& key, const harness::PathSet& paths) {
  const std::string text = c.get_string(key, "auto");
  if (text == "auto") return trainer::estimate_step_size(paths.primary, paths.secondary);
  return c.get_double(key, 0.0);
}

int train(const Config& c) {
  const Shared s = shared(c);
  const fs::path dir = work_dir(c);
  const auto paths = harness::load_paths(dir / "paths");
  trainer::MetaConfig m;
  m.N = s.N;
  m.K = s.K;
  m.H = s.H;
  m.F = s.F;
  m.variant = s.variant;
  m.mu = resolve_mu(c, "mu", paths);
  m.batch_size = c.get_size("train.batch_size", m.batch_size);
  m.learning_rate = c.get_double("train.learning_rate", m.learning_rate);
  m.lr_decay = c.get_double("train.lr_decay", m.lr_decay);
  m.patience = c.get_size("train.patience", m.patience);
  m.max_epochs = c.get_size("train.max_epochs", m.max_epochs);
  m.seed = c.get_size("train.seed", m.seed);
  m.threads = c.get_size("train.threads", m.threads);
  const double output_scale = c.get_double("train.output_scale", 1.0);
  const fs::path checkpoint = dir / "model.ckpt";
  const fs::path log_path = dir / "train_log.jsonl";
  finish(c, "train.");
  m.validate();

  const auto manifest = harness::read_manifest(dir / "manifest.json");
  const auto data = harness::materialize(manifest, paths, m.variant);
  std::fprintf(stderr, "training on %zu episodes (%zu validation), mu %.4g\n", data.train.size(),
               data.validation.size(), m.mu);

  std::ofstream log(log_path);
  if (!log) throw InputError("cannot write " + log_path.string());
  log << trainer::log_header(m) << '\n';
  auto params = model::init_params(m.dims(), m.seed, output_scale);
  const auto result = trainer::train(m, data, std::move(params), [&](const trainer::EpochLog& e) {
    const std::string line = trainer::log_line(e);
    log << line << '\n';
    log.flush();
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
  });
  if (!result.best.all_finite()) throw InvariantError("trained parameters are not finite");

  model::CheckpointMeta meta;
  meta.seed = m.seed;
  meta.N = m.N;
  meta.K = m.K;
  meta.mu = m.mu;
  meta.variant = trainer::to_string(m.variant);
  model::save_checkpoint(checkpoint, result.best, meta);
  std::printf("best epoch %zu, %zu diverged windows, %zu skipped steps; wrote %s\n", result.best_epoch,
              result.diverged, result.skipped_steps, checkpoint.string().c_str());
  return 0;
}

// eval and bench -------------------------------------------------------------

struct ControllerSpec {
  std::string kind;
  std::size_t N = 0;
  std::size_t K = 0;
  double mu = 0.01;
  std::shared_ptr<const model::ModelParams> params;
  std::shared_ptr<const filterbank::FilterBank> bank;
  trainer::Variant variant = trainer::Variant::whole_path;
};

ControllerSpec controller_spec(const Config& c, const std::string& section, const Shared& s) {
  ControllerSpec spec;
  spec.kind = c.get_string(section + "controller", "mdsaf");
  spec.N = s.N;
  spec.K = s.K;
  spec.variant = s.variant;
  spec.mu = c.get_double(section + "mu", 0.01);
  if (spec.kind == "mdsaf") {
    const fs::path ckpt = c.get_string(section + "checkpoint", (work_dir(c) / "model.ckpt").string());
    if (ckpt.string() == "random") {
      spec.params = std::make_shared<model::ModelParams>(model::init_params(model::Dims::for_filter(s.N, s.H), 1));
    } else {
      model::CheckpointMeta meta;
      spec.params = std::make_shared<model::ModelParams>(model::load_checkpoint(ckpt, &meta));
      spec.N = meta.N;
      spec.K = meta.K;
      spec.variant = trainer::parse_variant(meta.variant);
      if (!c.has(section + "mu")) spec.mu = meta.mu;
    }
  } else if (spec.kind != "nfxlms" && spec.kind != "dsnfxlms" && spec.kind != "frozen") {
    throw ConfigError("unknown controller '" + spec.kind + "' (mdsaf, nfxlms, dsnfxlms, frozen)");
  }
  if (spec.kind == "mdsaf" || spec.kind == "dsnfxlms") spec.bank = std::make_shared<filterbank::FilterBank>(spec.N, spec.K);
  return spec;
}

harness::ControllerFactory make_factory(const ControllerSpec& spec) {
  return [spec](const acoustics::AcousticPath& estimate) -> std::unique_ptr<Controller> {
    if (spec.kind == "nfxlms") return std::make_unique<baselines::NfxlmsController>(spec.N, estimate, spec.mu);
    if (spec.kind == "dsnfxlms") return std::make_unique<baselines::DsnfxlmsController>(*spec.bank, estimate, spec.mu);
    if (spec.kind == "frozen") return std::make_unique<harness::FrozenController>(spec.N);
    return std::make_unique<harness::MdsafController>(*spec.bank, estimate,
                                                      std::make_unique<harness::NetworkGradient>(spec.params), spec.mu);
  };
}

int eval(const Config& c) {
  const Shared s = shared(c);
  const fs::path dir = work_dir(c);
  const auto spec = controller_spec(c, "eval.", s);
  const auto paths = harness::load_paths(c.get_string("eval.paths", (dir / "paths").string()));
  harness::Scenario sc;
  sc.source = c.get_string("eval.source", "white");
  sc.duration = c.get_double("eval.duration", 10.0);
  sc.snr_db = c.get_double("eval.snr_db", sc.snr_db);
  sc.saturation = harness::saturation_for(c.get_double("eval.eta", std::numeric_limits<double>::infinity()));
  const std::size_t position = c.get_size("eval.position", 0);
  const std::int64_t switch_to = c.get_int("eval.switch_position", -1);
  sc.variant = spec.variant;
  sc.skip = c.get_size("eval.skip", 0);
  sc.runs = c.get_size("eval.runs", 1);
  sc.seed = c.get_size("eval.seed", 1);
  const fs::path out = c.get_string("eval.out_dir", (dir / "eval").string());
  finish(c, "eval.");

  if (position >= paths.primary.size()) throw ConfigError("eval.position out of range");
  sc.primary = paths.primary[position];
  sc.secondary = paths.secondary;
  if (switch_to >= 0) {
    if (static_cast<std::size_t>(switch_to) >= paths.primary.size()) {
      throw ConfigError("eval.switch_position out of range");
    }
    sc.switched_primary = paths.primary[static_cast<std::size_t>(switch_to)];
  }

  const auto result = harness::run_episode(make_factory(spec), sc);
  fs::create_directories(out);
  harness::write_metrics_csv(out / "metrics.csv", result.metrics);
  harness::write_psd_csv(out / "psd.csv", result.metrics.psd_off, result.metrics.psd_on);
  harness::write_curve_csv(out / "curve.csv", result.metrics.curve);
  std::printf("%s: NMSE %.2f dB over %zu run(s), %zu updates; wrote %s\n", result.metrics.controller.c_str(),
              result.metrics.nmse_db, sc.runs, result.updates, out.string().c_str());
  return 0;
}

int bench(const Config& c) {
  const Shared s = shared(c);
  const fs::path dir = work_dir(c);
  const auto spec = controller_spec(c, "bench.", s);
  const std::size_t skip = c.get_size("bench.skip", 0);
  const std::size_t iterations = c.get_size("bench.iterations", 1000);
  const std::size_t seed = c.get_size("bench.seed", 1);
  const fs::path out = c.get_string("bench.out", (dir / "timing.json").string());
  finish(c, "bench.");

  std::vector<double> taps(64, 0.0);
  taps[8] = 1.0;
  auto controller = make_factory(spec)(acoustics::AcousticPath{taps});
  const auto report = harness::measure_update_time(*controller, skip, iterations, seed);

  auto j = nlohmann::ordered_json::parse(harness::to_json(report));
  j["controller"] = spec.kind;
  j["N"] = spec.N;
  j["K"] = spec.K;
  j["skip"] = skip;
  if (spec.params) {
    const auto cost = model::count_params_flops(*spec.params);
    j["params"] = cost.params;
    j["flops"] = cost.flops;
  }
  write_text(out, j.dump(2) + "\n");
  std::printf("%s\n", j.dump().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned delayless subband active noise control"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Config&);
  };
  const Command commands[] = {
      {"gen-rirs", "Generate image-method primary and secondary paths", gen_rirs},
      {"make-dataset", "Write a training manifest", make_dataset},
      {"train", "Meta-train the update rule", train},
      {"eval", "Run a scenario and write metrics, PSD and NMSE curve CSVs", eval},
      {"bench", "Time controller updates and write a timing report", bench},
  };
  std::vector<CLI::App*> subs;
  for (const auto& cmd : commands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("-c,--config", config_path, "Settings file (key = value)");
    sub->add_option("-s,--set", overrides, "Override a setting, key=value")->allow_extra_args(false);
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const Config cfg = load_config(config_path, overrides);
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (subs[i]->parsed()) return commands[i].run(cfg);
    }
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 1;
  } catch (const InvariantError& e) {
    std::cerr << "invariant violation: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
}
