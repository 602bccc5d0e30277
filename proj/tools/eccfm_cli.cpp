// Command-line front end: train / eval / bench / trace / check subcommands.
// The CLI owns all file I/O; result files embed the resolved configuration
// and never contain wall-clock timing, so reruns with one seed are
// byte-identical. Timing goes to stdout (and bench.csv, whose job it is).

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eccfm/eval.hpp"
#include "eccfm/trainer.hpp"
#include "eccfm/version.hpp"
#include "json.hpp"

using nlohmann::json;
using namespace eccfm;

namespace {

struct CodeBundle {
  ParityCheckMatrix h;
  GeneratorMatrix g;
  std::string id;
  std::string hash;
};

CodeBundle load_code(const std::string& spec) {
  if (spec == "hamming74") {
    CodeBundle b{hamming74(), {}, spec, ""};
    b.g = derive_generator(b.h);
    b.hash = code_hash(b.h);
    return b;
  }
  if (spec.rfind("rep", 0) == 0) {
    int n = 0;
    try {
      n = std::stoi(spec.substr(3));
    } catch (const std::exception&) {
      throw ConfigError("unrecognized code id: " + spec);
    }
    CodeBundle b{repetition(n), {}, spec, ""};
    b.g = derive_generator(b.h);
    b.hash = code_hash(b.h);
    return b;
  }
  std::ifstream in(spec);
  if (!in) throw ConfigError("cannot read code file: " + spec);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  CodeBundle b{parse_alist(text), {}, spec, ""};
  b.g = derive_generator(b.h);
  b.hash = code_hash(b.h);
  return b;
}

struct ChannelOpts {
  std::string kind = "awgn";
  double ebn0_db = 4.0;
  double rayleigh_scale = 1.0;
  double sigma_override = -1.0;  // negative = no override

  void attach(CLI::App* cmd) {
    cmd->add_option("--channel", kind, "Channel kind")
        ->check(CLI::IsMember({"awgn", "rayleigh"}))
        ->capture_default_str();
    cmd->add_option("--ebn0", ebn0_db, "Eb/N0 in dB")->capture_default_str();
    cmd->add_option("--rayleigh-scale", rayleigh_scale,
                    "Rayleigh fading scale")
        ->capture_default_str();
    cmd->add_option("--sigma-override", sigma_override,
                    "Fixed noise standard deviation (overrides --ebn0)");
  }

  ChannelConfig resolve(const CodeBundle& code) const {
    ChannelConfig cc;
    cc.kind = kind == "rayleigh" ? ChannelKind::rayleigh : ChannelKind::awgn;
    cc.ebn0_db = ebn0_db;
    cc.rate = static_cast<double>(code.g.k) / code.g.n;
    cc.rayleigh_scale = rayleigh_scale;
    if (sigma_override >= 0.0) cc.sigma_override = sigma_override;
    return cc;
  }

  json to_json(const CodeBundle& code) const {
    json j;
    j["kind"] = kind;
    j["ebn0_db"] = ebn0_db;
    j["rate"] = static_cast<double>(code.g.k) / code.g.n;
    j["rayleigh_scale"] = rayleigh_scale;
    if (sigma_override >= 0.0) j["sigma_override"] = sigma_override;
    return j;
  }
};

std::filesystem::path out_dir(const std::string& flag_value) {
  std::string dir = flag_value;
  if (dir.empty()) {
    const char* env = std::getenv("ECCFM_OUT_DIR");
    dir = env && *env ? env : ".";
  }
  std::filesystem::create_directories(dir);
  return dir;
}

void write_text(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << body;
  if (!out) throw Error("failed writing " + path.string());
}

void write_summary(const std::filesystem::path& dir, const json& j) {
  write_text(dir / "summary.json", j.dump(2) + "\n");
}

BackboneKind parse_backbone(const std::string& name) {
  if (name == "mlp") return BackboneKind::mlp;
  if (name == "tiny_cross_attention" || name == "xattn")
    return BackboneKind::tiny_cross_attention;
  throw ConfigError("unknown backbone: " + name);
}

const char* backbone_name(BackboneKind kind) {
  return kind == BackboneKind::mlp ? "mlp" : "tiny_cross_attention";
}

Checkpoint load_checkpoint(const std::string& path, const CodeBundle& code) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint: " + path);
  auto ck = parse_checkpoint(in);
  if (ck.params.config.n != code.h.n() || ck.params.config.m != code.h.m())
    throw ConfigError("checkpoint was trained for a (" +
                      std::to_string(ck.params.config.n) + "," +
                      std::to_string(ck.params.config.n - ck.params.config.m) +
                      ")-shaped code, not " + code.id);
  return ck;
}

// ---------------------------------------------------------------- train ----

struct TrainOpts {
  std::string code = "hamming74";
  std::string objective = "eccfm";
  std::string condition = "soft";
  std::string condition_sigma = "diffusion";
  std::string backbone = "mlp";
  int depth = 3;
  int width = 64;
  int embed_dim = 16;
  int epochs = 1500;
  int steps_per_epoch = 1000;
  int batch_size = 128;
  double lr_init = 1e-4;
  double lr_final = 5e-7;
  double lambda_syn = 0.01;
  double alpha = 0.8;
  double ema_decay = 0.999;
  double beta_step = 0.01;
  int total_steps = 0;  // 0 = schedule default n - k + 5
  std::uint64_t seed = 0;
  bool random_codewords = false;
  double guard_ebn0 = -1.0;  // negative = no coverage guard
  int log_every = 1;
  std::string out;
};

int cmd_train(const TrainOpts& o) {
  auto code = load_code(o.code);
  auto dir = out_dir(o.out);

  BackboneConfig bc;
  bc.kind = parse_backbone(o.backbone);
  bc.n = code.h.n();
  bc.m = code.h.m();
  bc.depth = o.depth;
  bc.width = o.width;
  bc.embed_dim = o.embed_dim;
  bc.validate();

  auto sched = make_schedule(code.h.n(), code.g.k, o.beta_step,
                             o.total_steps > 0
                                 ? std::optional<int>(o.total_steps)
                                 : std::nullopt);

  TrainConfig cfg;
  if (o.objective == "eccfm") cfg.objective = Objective::eccfm;
  else if (o.objective == "vanilla_cm") cfg.objective = Objective::vanilla_cm;
  else if (o.objective == "ddecc") cfg.objective = Objective::ddecc;
  else throw ConfigError("unknown objective: " + o.objective);
  if (o.condition == "soft") cfg.condition_kind = ConditionKind::soft;
  else if (o.condition == "hard") cfg.condition_kind = ConditionKind::hard;
  else throw ConfigError("unknown condition kind: " + o.condition);
  if (o.condition_sigma == "diffusion")
    cfg.condition_sigma = ConditionSigmaSource::diffusion;
  else if (o.condition_sigma == "channel")
    cfg.condition_sigma = ConditionSigmaSource::channel;
  else throw ConfigError("unknown condition sigma source: " + o.condition_sigma);
  cfg.epochs = o.epochs;
  cfg.steps_per_epoch = o.steps_per_epoch;
  cfg.batch_size = o.batch_size;
  cfg.lr_init = o.lr_init;
  cfg.lr_final = o.lr_final;
  cfg.lambda_syn = o.lambda_syn;
  cfg.alpha = o.alpha;
  cfg.ema_decay = o.ema_decay;
  cfg.seed = o.seed;
  cfg.random_codewords = o.random_codewords;
  if (o.guard_ebn0 >= 0.0) cfg.guard_ebn0_db = o.guard_ebn0;

  auto st = init_train_state(bc, cfg);
  std::string log;
  log.reserve(1 << 20);
  log += "step,epoch,lr,loss,consistency,syn_penalty,cond_mean\n";
  double last_epoch_sum = 0.0;
  int last_epoch_count = 0;
  char row[192];
  auto t0 = std::chrono::steady_clock::now();
  train_run(st, cfg, code.h, code.g, sched, [&](const TrainStepRecord& r) {
    if (r.step % o.log_every == 0) {
      std::snprintf(row, sizeof row,
                    "%" PRId64 ",%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step,
                    r.epoch, r.lr, r.loss, r.consistency, r.syn_penalty,
                    r.cond_mean);
      log += row;
    }
    if (r.epoch == cfg.epochs - 1) {
      last_epoch_sum += r.loss;
      ++last_epoch_count;
    }
  });
  auto t1 = std::chrono::steady_clock::now();
  const double secs = std::chrono::duration<double>(t1 - t0).count();

  write_text(dir / "train_log.csv", log);
  {
    std::ofstream out(dir / "checkpoint.bin", std::ios::binary);
    if (!out) throw Error("cannot write checkpoint.bin");
    serialize_checkpoint(out, st.params, &st.opt);
  }

  json j;
  j["command"] = "train";
  j["version"] = kVersion;
  json c;
  c["code"] = o.code;
  c["code_hash"] = code.hash;
  c["objective"] = o.objective;
  c["condition"] = o.condition;
  c["condition_sigma"] = o.condition_sigma;
  c["backbone"] = o.backbone;
  c["depth"] = o.depth;
  c["width"] = o.width;
  c["embed_dim"] = o.embed_dim;
  c["epochs"] = o.epochs;
  c["steps_per_epoch"] = o.steps_per_epoch;
  c["batch_size"] = o.batch_size;
  c["lr_init"] = o.lr_init;
  c["lr_final"] = o.lr_final;
  c["lambda_syn"] = o.lambda_syn;
  c["alpha"] = o.alpha;
  c["ema_decay"] = o.ema_decay;
  c["beta_step"] = o.beta_step;
  c["total_steps"] = sched.total_steps;
  c["seed"] = o.seed;
  c["random_codewords"] = o.random_codewords;
  if (o.guard_ebn0 >= 0.0) c["guard_ebn0_db"] = o.guard_ebn0;
  j["config"] = c;
  json r;
  r["param_count"] = st.params.values.size();
  r["steps_total"] = st.opt.step;
  r["final_epoch_mean_loss"] = last_epoch_sum / last_epoch_count;
  j["result"] = r;
  write_summary(dir, j);

  std::printf("trained %" PRId64 " steps in %.1f s (%.2f ms/step); "
              "final-epoch mean loss %.6f\n",
              st.opt.step, secs, 1000.0 * secs / st.opt.step,
              last_epoch_sum / last_epoch_count);
  std::printf("wrote %s, train_log.csv, summary.json\n",
              (dir / "checkpoint.bin").c_str());
  return 0;
}

// ----------------------------------------------------------------- eval ----

struct EvalOpts {
  std::string code = "hamming74";
  std::string decoder = "bp";
  std::string checkpoint;
  std::string condition = "soft";
  ChannelOpts channel;
  std::int64_t min_frame_errors = 500;
  std::int64_t max_frames = 10'000'000;
  int workers = 1;
  std::uint64_t seed = 0;
  int bp_iters = 20;
  int multi_steps = 3;
  double renoise_fraction = 0.5;
  int max_steps = 0;  // 0 = default 2N
  double beta_step = 0.01;
  bool use_live = false;
  bool frames_csv = false;
  std::string out;
};

struct BoundDecoder {
  DecodeFn fn;
  std::optional<std::size_t> param_count;
  bool used_ema = false;
};

BoundDecoder bind_decoder(const EvalOpts& o, const CodeBundle& code,
                          double sigma, const DiffusionSchedule& sched,
                          int max_steps,
                          std::shared_ptr<ModelParams>* keep_alive) {
  BoundDecoder b;
  const ParityCheckMatrix& h = code.h;
  const GeneratorMatrix& g = code.g;
  if (o.decoder == "bp") {
    int iters = o.bp_iters;
    b.fn = [&h, sigma, iters](const std::vector<double>& y, RngStream&) {
      return decode_bp(y, h, sigma, iters);
    };
    return b;
  }
  if (o.decoder == "ml") {
    b.fn = [&h, &g](const std::vector<double>& y, RngStream&) {
      return decode_ml_exhaustive(y, g, h);
    };
    return b;
  }
  if (o.decoder == "hard") {
    b.fn = [](const std::vector<double>& y, RngStream&) {
      DecodeOutcome out;
      out.bits = demodulate_hard(y);
      out.steps_used = 1;
      return out;
    };
    return b;
  }

  if (o.checkpoint.empty())
    throw ConfigError("decoder '" + o.decoder + "' needs --checkpoint");
  auto ck = load_checkpoint(o.checkpoint, code);
  bool use_ema = ck.state.has_value() && !o.use_live;
  auto params = std::make_shared<ModelParams>(
      ck.params.config, use_ema ? ck.state->ema : ck.params.values);
  validate_params(*params);
  *keep_alive = params;
  b.param_count = params->values.size();
  b.used_ema = use_ema;
  ConditionKind cond =
      o.condition == "hard" ? ConditionKind::hard : ConditionKind::soft;

  if (o.decoder == "onestep") {
    b.fn = [params, &h, sigma, cond](const std::vector<double>& y, RngStream&) {
      return decode_one_step(*params, y, h, sigma, cond);
    };
    return b;
  }
  if (o.decoder == "multistep") {
    int steps = o.multi_steps;
    double frac = o.renoise_fraction;
    b.fn = [params, &h, sigma, sched, steps, frac,
            cond](const std::vector<double>& y, RngStream& rng) {
      return decode_multi_step(*params, y, h, sigma, sched, steps, frac, rng,
                               cond);
    };
    return b;
  }
  if (o.decoder == "ddecc") {
    b.fn = [params, &h, sigma, sched,
            max_steps](const std::vector<double>& y, RngStream&) {
      return decode_ddecc(*params, y, h, sigma, sched, max_steps);
    };
    return b;
  }
  throw ConfigError("unknown decoder: " + o.decoder);
}

int cmd_eval(const EvalOpts& o) {
  auto code = load_code(o.code);
  auto dir = out_dir(o.out);
  auto cc = o.channel.resolve(code);
  const double sigma = channel_sigma(cc);
  if (!(sigma > 0.0) && (o.decoder == "bp" || o.decoder == "onestep" ||
                         o.decoder == "multistep" || o.decoder == "ddecc"))
    throw ConfigError("decoder '" + o.decoder +
                      "' needs a positive noise level; got sigma = 0");
  auto sched = make_schedule(code.h.n(), code.g.k, o.beta_step);
  const int max_steps = o.max_steps > 0 ? o.max_steps : 2 * sched.total_steps;

  std::shared_ptr<ModelParams> keep_alive;
  auto bound = bind_decoder(o, code, sigma, sched, max_steps, &keep_alive);

  StopRule stop;
  stop.min_frame_errors = o.min_frame_errors;
  stop.max_frames = o.max_frames;

  std::vector<FrameRecord> frame_log;
  auto res = run_eval(bound.fn, code.h, code.g, cc, stop, o.seed, o.workers,
                      o.frames_csv ? &frame_log : nullptr);

  json j;
  j["command"] = "eval";
  j["version"] = kVersion;
  json c;
  c["code"] = o.code;
  c["code_hash"] = code.hash;
  c["decoder"] = o.decoder;
  c["channel"] = o.channel.to_json(code);
  c["min_frame_errors"] = o.min_frame_errors;
  c["max_frames"] = o.max_frames;
  c["workers"] = o.workers;
  c["seed"] = o.seed;
  if (o.decoder == "bp") c["bp_iters"] = o.bp_iters;
  if (o.decoder == "multistep") {
    c["multi_steps"] = o.multi_steps;
    c["renoise_fraction"] = o.renoise_fraction;
  }
  if (o.decoder == "ddecc") c["max_steps"] = max_steps;
  if (o.decoder == "onestep" || o.decoder == "multistep" ||
      o.decoder == "ddecc") {
    c["checkpoint"] = o.checkpoint;
    c["condition"] = o.condition;
    c["beta_step"] = o.beta_step;
    c["weights"] = bound.used_ema ? "ema" : "live";
  }
  j["config"] = c;
  json r;
  r["frames"] = res.frames;
  r["bit_errors"] = res.bit_errors;
  r["frame_errors"] = res.frame_errors;
  r["converged_frames"] = res.converged_frames;
  r["ber"] = res.ber;
  r["fer"] = res.fer;
  if (res.neg_ln_ber) r["neg_ln_ber"] = *res.neg_ln_ber;
  else r["neg_ln_ber"] = nullptr;
  r["mean_steps"] = res.mean_steps;
  r["param_count"] = bound.param_count ? *bound.param_count : 0;
  j["result"] = r;
  write_summary(dir, j);

  if (o.frames_csv) {
    std::string csv = "frame,bit_errors,converged,steps_used\n";
    char row[96];
    for (const auto& fr : frame_log) {
      std::snprintf(row, sizeof row, "%" PRId64 ",%d,%d,%d\n", fr.frame,
                    fr.bit_errors, fr.converged ? 1 : 0, fr.steps_used);
      csv += row;
    }
    write_text(dir / "frames.csv", csv);
  }

  std::printf("%s on %s @ %.3g dB: BER %.6g FER %.6g over %" PRId64
              " frames (%.0f frames/s)\n",
              o.decoder.c_str(), code.id.c_str(), cc.ebn0_db, res.ber, res.fer,
              res.frames, res.frames_per_second);
  std::printf("wrote summary.json%s\n", o.frames_csv ? " and frames.csv" : "");
  return 0;
}

// ---------------------------------------------------------------- bench ----

struct BenchOpts {
  std::string code = "hamming74";
  std::vector<std::string> decoders = {"onestep", "ddecc", "bp", "hard"};
  std::string checkpoint;
  std::string condition = "soft";
  ChannelOpts channel;
  std::int64_t frames = 10000;
  std::int64_t warmup = 200;
  std::uint64_t seed = 0;
  int bp_iters = 20;
  int multi_steps = 3;
  double renoise_fraction = 0.5;
  int max_steps = 0;
  double beta_step = 0.01;
  bool use_live = false;
  std::string out;
};

int cmd_bench(const BenchOpts& o) {
  auto code = load_code(o.code);
  auto dir = out_dir(o.out);
  auto cc = o.channel.resolve(code);
  const double sigma = channel_sigma(cc);
  auto sched = make_schedule(code.h.n(), code.g.k, o.beta_step);
  const int max_steps = o.max_steps > 0 ? o.max_steps : 2 * sched.total_steps;

  std::vector<BenchEntry> entries;
  std::vector<std::shared_ptr<ModelParams>> keep;
  std::size_t param_count = 0;
  for (const auto& name : o.decoders) {
    EvalOpts eo;
    eo.code = o.code;
    eo.decoder = name;
    eo.checkpoint = o.checkpoint;
    eo.condition = o.condition;
    eo.bp_iters = o.bp_iters;
    eo.multi_steps = o.multi_steps;
    eo.renoise_fraction = o.renoise_fraction;
    eo.use_live = o.use_live;
    std::shared_ptr<ModelParams> alive;
    auto bound = bind_decoder(eo, code, sigma, sched, max_steps, &alive);
    entries.push_back({name, bound.fn});
    if (bound.param_count) param_count = *bound.param_count;
    if (alive) keep.push_back(alive);
  }

  auto rows = run_benchmark(entries, code.h, code.g, cc, o.frames, o.warmup,
                            o.seed);

  std::string csv =
      "decoder,frames,wall_seconds,frames_per_second,speedup_vs_first,"
      "mean_steps\n";
  char row[160];
  for (const auto& r : rows) {
    std::snprintf(row, sizeof row, "%s,%" PRId64 ",%.6f,%.1f,%.4f,%.4f\n",
                  r.id.c_str(), r.frames, r.wall_seconds, r.frames_per_second,
                  r.speedup_vs_first, r.mean_steps);
    csv += row;
    std::printf("%-10s %8.0f frames/s  speedup %6.2fx  mean steps %.3f\n",
                r.id.c_str(), r.frames_per_second, r.speedup_vs_first,
                r.mean_steps);
  }
  write_text(dir / "bench.csv", csv);

  json j;
  j["command"] = "bench";
  j["version"] = kVersion;
  json c;
  c["code"] = o.code;
  c["code_hash"] = code.hash;
  c["decoders"] = o.decoders;
  c["channel"] = o.channel.to_json(code);
  c["frames"] = o.frames;
  c["warmup"] = o.warmup;
  c["seed"] = o.seed;
  if (!o.checkpoint.empty()) c["checkpoint"] = o.checkpoint;
  j["config"] = c;
  j["result"] = {{"rows", rows.size()}, {"param_count", param_count}};
  write_summary(dir, j);
  std::printf("wrote bench.csv and summary.json\n");
  return 0;
}

// ---------------------------------------------------------------- trace ----

struct TraceOpts {
  std::string code = "hamming74";
  std::string checkpoint;
  ChannelOpts channel;
  std::int64_t samples = 10;
  int max_steps = 0;
  double beta_step = 0.01;
  std::uint64_t seed = 0;
  bool use_live = false;
  std::string out;
};

int cmd_trace(const TraceOpts& o) {
  auto code = load_code(o.code);
  auto dir = out_dir(o.out);
  auto cc = o.channel.resolve(code);
  auto sched = make_schedule(code.h.n(), code.g.k, o.beta_step);
  const int max_steps = o.max_steps > 0 ? o.max_steps : 2 * sched.total_steps;
  if (o.checkpoint.empty()) throw ConfigError("trace needs --checkpoint");
  auto ck = load_checkpoint(o.checkpoint, code);
  bool use_ema = ck.state.has_value() && !o.use_live;
  ModelParams params{ck.params.config,
                     use_ema ? ck.state->ema : ck.params.values};
  validate_params(params);

  auto rows = trace_trajectory(params, code.h, code.g, cc, sched, o.samples,
                               max_steps, o.seed);
  std::string csv = "sample,step,e_hard,e_soft\n";
  char row[96];
  for (const auto& r : rows) {
    std::snprintf(row, sizeof row, "%" PRId64 ",%d,%d,%.9g\n", r.sample,
                  r.step, r.e_hard, r.e_soft);
    csv += row;
  }
  write_text(dir / "trace.csv", csv);

  json j;
  j["command"] = "trace";
  j["version"] = kVersion;
  json c;
  c["code"] = o.code;
  c["code_hash"] = code.hash;
  c["checkpoint"] = o.checkpoint;
  c["channel"] = o.channel.to_json(code);
  c["samples"] = o.samples;
  c["max_steps"] = max_steps;
  c["beta_step"] = o.beta_step;
  c["seed"] = o.seed;
  c["weights"] = use_ema ? "ema" : "live";
  j["config"] = c;
  j["result"] = {{"rows", rows.size()},
                 {"param_count", params.values.size()}};
  write_summary(dir, j);
  std::printf("wrote trace.csv (%zu rows) and summary.json\n", rows.size());
  return 0;
}

// ---------------------------------------------------------------- check ----

int cmd_check(std::uint64_t seed) {
  int failures = 0;
  auto report = [&](const char* name, bool ok) {
    std::printf("%-22s %s\n", name, ok ? "pass" : "FAIL");
    if (!ok) ++failures;
  };

  // soft-syndrome pinned values
  {
    auto h = hamming74();
    std::vector<double> ones(7, 1.0);
    auto s = soft_syndrome(ones, h, 1.0);
    bool ok = true;
    for (double v : s) ok = ok && std::fabs(v - 0.33178511780695874) < 1e-6;
    std::vector<double> zeroed = ones;
    zeroed[0] = 0.0;
    auto sz = soft_syndrome(zeroed, h, 1.0);
    // an erased coordinate pins every check containing it to 1/2
    for (int row : h.col_support(0)) ok = ok && sz[row] == 0.5;
    ok = ok && soft_syndrome_condition(ones, h, 0.3) < 1e-6;
    report("syndrome", ok);
  }

  // per-bit semi-triangle inequality over one million random triples
  {
    RngStream rng(seed, 101);
    bool ok = true;
    for (int i = 0; i < 1000000 && ok; ++i) {
      std::vector<double> p{rng.uniform01()}, q{rng.uniform01()};
      BitVec x0{static_cast<std::uint8_t>(rng.bernoulli_half() ? 1 : 0)};
      ok = prop1_check(p, q, x0)[0] == 1;
    }
    report("prop1", ok);
  }

  // analytic gradient of the training loss vs central differences
  {
    auto h = hamming74();
    auto g = derive_generator(h);
    auto sched = make_schedule(7, 4, 0.05);
    bool ok = true;
    for (auto kind : {BackboneKind::mlp, BackboneKind::tiny_cross_attention}) {
      BackboneConfig bc;
      bc.kind = kind;
      bc.n = 7;
      bc.m = 3;
      bc.depth = 2;
      bc.width = kind == BackboneKind::mlp ? 24 : 12;
      bc.embed_dim = 8;
      auto params = init_params(bc, seed + 7);
      TrainConfig cfg;
      cfg.batch_size = 4;
      RngStream rng(seed, 202);
      auto batch = draw_batch(cfg, h, g, sched, rng, 4);
      std::vector<double> grad(params.values.size(), 0.0);
      ForwardTrace tt, tr;
      batch_loss_grad(params, cfg, h, sched, batch, &grad, nullptr, tt, tr);
      RngStream pick(seed, 303);
      for (int c = 0; c < 25; ++c) {
        std::size_t i = static_cast<std::size_t>(pick.uniform_int(
            0, static_cast<std::int64_t>(params.values.size()) - 1));
        const double step = 1e-6;
        auto pp = params, pm = params;
        pp.values[i] += step;
        pm.values[i] -= step;
        double fd = (batch_loss_grad(pp, cfg, h, sched, batch, nullptr,
                                     nullptr, tt, tr).loss -
                     batch_loss_grad(pm, cfg, h, sched, batch, nullptr,
                                     nullptr, tt, tr).loss) /
                    (2.0 * step);
        double denom = std::max({1e-8, std::fabs(grad[i]), std::fabs(fd)});
        if (std::fabs(grad[i] - fd) / denom >= 1e-4) ok = false;
      }
    }
    report("gradient", ok);
  }

  std::printf("%s\n", failures == 0 ? "all checks passed" : "CHECKS FAILED");
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consistency-trained diffusion decoding for linear block codes"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_config("--config", "",
                 "Options file with one [subcommand] section per command");
  app.set_version_flag("--version", kVersion);

  TrainOpts to;
  auto* train = app.add_subcommand("train", "Train a decoder model");
  train->add_option("--code", to.code, "Code id or alist path")
      ->capture_default_str();
  train->add_option("--objective", to.objective, "Training objective")
      ->check(CLI::IsMember({"eccfm", "vanilla_cm", "ddecc"}))
      ->capture_default_str();
  train->add_option("--condition", to.condition, "Noise condition kind")
      ->check(CLI::IsMember({"soft", "hard"}))
      ->capture_default_str();
  train->add_option("--condition-sigma", to.condition_sigma,
                    "Sigma fed to the soft condition during training")
      ->check(CLI::IsMember({"diffusion", "channel"}))
      ->capture_default_str();
  train->add_option("--backbone", to.backbone, "Backbone kind")
      ->check(CLI::IsMember({"mlp", "tiny_cross_attention", "xattn"}))
      ->capture_default_str();
  train->add_option("--depth", to.depth)->capture_default_str();
  train->add_option("--width", to.width)->capture_default_str();
  train->add_option("--embed-dim", to.embed_dim)->capture_default_str();
  train->add_option("--epochs", to.epochs)->capture_default_str();
  train->add_option("--steps-per-epoch", to.steps_per_epoch)
      ->capture_default_str();
  train->add_option("--batch-size", to.batch_size)->capture_default_str();
  train->add_option("--lr-init", to.lr_init)->capture_default_str();
  train->add_option("--lr-final", to.lr_final)->capture_default_str();
  train->add_option("--lambda", to.lambda_syn, "Soft-syndrome loss weight")
      ->capture_default_str();
  train->add_option("--alpha", to.alpha, "Trajectory pair ratio r = alpha t")
      ->capture_default_str();
  train->add_option("--ema-decay", to.ema_decay)->capture_default_str();
  train->add_option("--beta-step", to.beta_step, "Schedule increment")
      ->capture_default_str();
  train->add_option("--total-steps", to.total_steps,
                    "Schedule length (0 = n - k + 5)")
      ->capture_default_str();
  train->add_option("--seed", to.seed)->capture_default_str();
  train->add_flag("--random-codewords", to.random_codewords,
                  "Train on random codewords instead of the zero word");
  train->add_option("--guard-ebn0", to.guard_ebn0,
                    "Require schedule coverage of this Eb/N0 (dB)");
  train->add_option("--log-every", to.log_every, "Log every k-th step")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train->add_option("--out", to.out, "Output directory (or $ECCFM_OUT_DIR)");

  EvalOpts eo;
  auto* eval = app.add_subcommand("eval", "Measure BER/FER by Monte Carlo");
  eval->add_option("--code", eo.code)->capture_default_str();
  eval->add_option("--decoder", eo.decoder, "Decoder under test")
      ->check(CLI::IsMember(
          {"onestep", "multistep", "ddecc", "bp", "ml", "hard"}))
      ->capture_default_str();
  eval->add_option("--checkpoint", eo.checkpoint,
                   "Trained model (neural decoders)");
  eval->add_option("--condition", eo.condition)
      ->check(CLI::IsMember({"soft", "hard"}))
      ->capture_default_str();
  eo.channel.attach(eval);
  eval->add_option("--min-frame-errors", eo.min_frame_errors)
      ->capture_default_str();
  eval->add_option("--max-frames", eo.max_frames)->capture_default_str();
  eval->add_option("--workers", eo.workers)->capture_default_str();
  eval->add_option("--seed", eo.seed)->capture_default_str();
  eval->add_option("--bp-iters", eo.bp_iters)->capture_default_str();
  eval->add_option("--multi-steps", eo.multi_steps)->capture_default_str();
  eval->add_option("--renoise-fraction", eo.renoise_fraction)
      ->capture_default_str();
  eval->add_option("--max-steps", eo.max_steps,
                   "Iterative decoder cap (0 = 2N)")
      ->capture_default_str();
  eval->add_option("--beta-step", eo.beta_step)->capture_default_str();
  eval->add_flag("--use-live", eo.use_live,
                 "Use live weights instead of the EMA");
  eval->add_flag("--frames-csv", eo.frames_csv, "Write per-frame records");
  eval->add_option("--out", eo.out, "Output directory (or $ECCFM_OUT_DIR)");

  BenchOpts bo;
  auto* bench = app.add_subcommand("bench", "Compare decoder throughput");
  bench->add_option("--code", bo.code)->capture_default_str();
  bench->add_option("--decoders", bo.decoders, "Decoders to time")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--checkpoint", bo.checkpoint);
  bench->add_option("--condition", bo.condition)
      ->check(CLI::IsMember({"soft", "hard"}));
  bo.channel.attach(bench);
  bench->add_option("--frames", bo.frames)->capture_default_str();
  bench->add_option("--warmup", bo.warmup)->capture_default_str();
  bench->add_option("--seed", bo.seed)->capture_default_str();
  bench->add_option("--bp-iters", bo.bp_iters)->capture_default_str();
  bench->add_option("--multi-steps", bo.multi_steps)->capture_default_str();
  bench->add_option("--renoise-fraction", bo.renoise_fraction)
      ->capture_default_str();
  bench->add_option("--max-steps", bo.max_steps)->capture_default_str();
  bench->add_option("--beta-step", bo.beta_step)->capture_default_str();
  bench->add_flag("--use-live", bo.use_live);
  bench->add_option("--out", bo.out);

  TraceOpts ro;
  auto* trace = app.add_subcommand(
      "trace", "Record per-step noise measures of the iterative decoder");
  trace->add_option("--code", ro.code)->capture_default_str();
  trace->add_option("--checkpoint", ro.checkpoint)->required();
  ro.channel.attach(trace);
  trace->add_option("--samples", ro.samples)->capture_default_str();
  trace->add_option("--max-steps", ro.max_steps)->capture_default_str();
  trace->add_option("--beta-step", ro.beta_step)->capture_default_str();
  trace->add_option("--seed", ro.seed)->capture_default_str();
  trace->add_flag("--use-live", ro.use_live);
  trace->add_option("--out", ro.out);

  std::uint64_t check_seed = 0;
  auto* check = app.add_subcommand(
      "check", "Run the built-in property checks (syndrome, prop1, gradient)");
  check->add_option("--seed", check_seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);  // prints the usage message
    if (code != 0) {
      json err;
      err["error"] = std::string("argument error: ") + e.what();
      std::fprintf(stderr, "%s\n", err.dump().c_str());
    }
    return code;
  }

  try {
    if (train->parsed()) return cmd_train(to);
    if (eval->parsed()) return cmd_eval(eo);
    if (bench->parsed()) return cmd_bench(bo);
    if (trace->parsed()) return cmd_trace(ro);
    if (check->parsed()) return cmd_check(check_seed);
  } catch (const std::exception& e) {
    json err;
    err["error"] = e.what();
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return 1;
  }
  return 0;
}
