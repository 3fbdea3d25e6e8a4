// icmf: train, evaluate and serve the interactive segmentation model.
//
// Exit codes: 0 ok, 2 usage or invalid configuration, 3 data error
// (unreadable or malformed files, mismatched checkpoints), 4 numeric check failed.

#include <CLI11.hpp>
#include <httplib.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "icmf/checkpoint.hpp"
#include "icmf/diagnostics.hpp"
#include "icmf/evaluation.hpp"
#include "icmf/image.hpp"
#include "icmf/model.hpp"
#include "icmf/rng.hpp"
#include "icmf/seg_head.hpp"
#include "icmf/service.hpp"
#include "icmf/training.hpp"

using namespace icmf;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- config

/// Effective configuration: preset defaults, then the --config file, then
/// --set key=value assignments, then dedicated flags. The seed falls back to
/// ICMF_SEED and finally 0.
struct CliConfig {
  std::string preset = "tiny";
  ModelConfig model = ModelConfig::tiny();
  TrainConfig train = TrainConfig::tiny();
  std::uint64_t seed = 0;
  std::size_t synth = 8;
  std::string data_dir;
  bool model_specified = false;  // the user said something about the model

  json to_json() const {
    json m, t;
    icmf::to_json(m, model);
    icmf::to_json(t, train);
    return {{"preset", preset}, {"seed", seed}, {"model", m}, {"train", t},
            {"data", {{"synth", synth}, {"dir", data_dir}}}};
  }
};

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config_path, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--set", f.sets, "Override a config key, e.g. --set model.dim=32 (repeatable)");
  f.seed_opt = app->add_option("--seed", f.seed, "Seed for every random stream (default: ICMF_SEED or 0)");
}

void assign_path(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;  // bare strings need no quotes
  std::vector<std::string> parts;
  for (std::size_t start = 0;;) {
    const auto dot = key.find('.', start);
    parts.push_back(key.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json* node = &root;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    node = &(*node)[parts[i]];
    if (!node->is_object() && !node->is_null()) throw UsageError("--set: '" + key + "' walks into a non-object");
  }
  (*node)[parts.back()] = value;
}

std::uint64_t parse_seed(const std::string& text, const std::string& origin) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError(origin + ": '" + text + "' is not a non-negative integer seed");
}

CliConfig load_config(const CommonFlags& f) {
  json file = json::object();
  if (!f.config_path.empty()) {
    file = json::parse(read_file(f.config_path), nullptr, false);
    if (file.is_discarded() || !file.is_object())
      throw DataError("'" + f.config_path + "' is not a JSON object");
  }
  for (const auto& s : f.sets) assign_path(file, s);
  for (const auto& [key, value] : file.items())
    if (key != "preset" && key != "seed" && key != "model" && key != "train" && key != "data")
      throw UsageError("unknown config key '" + key + "'");

  CliConfig c;
  c.preset = file.value("preset", std::string("tiny"));
  c.model = ModelConfig::preset(c.preset);
  c.train = c.preset == "tiny" ? TrainConfig::tiny() : TrainConfig{};
  c.model_specified = file.contains("preset") || file.contains("model");
  if (file.contains("model")) merge_json(file["model"], c.model);
  if (file.contains("train")) merge_json(file["train"], c.train);
  if (file.contains("data")) {
    for (const auto& [key, value] : file["data"].items()) {
      if (key == "synth")
        c.synth = value.get<std::size_t>();
      else if (key == "dir")
        c.data_dir = value.get<std::string>();
      else
        throw UsageError("unknown config key 'data." + key + "'");
    }
  }

  if (f.seed_opt && f.seed_opt->count())
    c.seed = f.seed;
  else if (file.contains("seed"))
    c.seed = file["seed"].get<std::uint64_t>();
  else if (const char* env = std::getenv("ICMF_SEED"); env && *env)
    c.seed = parse_seed(env, "ICMF_SEED");
  c.train.seed = c.seed;
  return c;
}

void finalize(CliConfig& c) {
  c.model.validate();
  c.train.validate();
  std::cerr << "config: " << c.to_json().dump() << '\n';
}

// ---------------------------------------------------------------- model sources

struct Source {
  std::unique_ptr<ICMFormer> model;
  std::unique_ptr<Segmenter> seg;
  std::size_t side = 0;
};

std::string config_diff(const ModelConfig& want, const ModelConfig& got) {
  json a, b;
  to_json(a, want);
  to_json(b, got);
  std::string out;
  for (const auto& [key, value] : a.items())
    if (b[key] != value) out += (out.empty() ? "" : ", ") + key + ": config " + value.dump() + " vs checkpoint " + b[key].dump();
  return out;
}

Source make_source(const std::string& checkpoint, const std::string& stub, const CliConfig& cfg) {
  Source s;
  if (!checkpoint.empty() && !stub.empty()) throw UsageError("--checkpoint and --stub are mutually exclusive");
  if (!stub.empty()) {
    if (stub == "oracle")
      s.seg = std::make_unique<OracleSegmenter>();
    else if (stub == "empty")
      s.seg = std::make_unique<EmptySegmenter>();
    else if (stub == "quadrant")
      s.seg = std::make_unique<QuadrantSegmenter>();
    else
      throw UsageError("unknown stub '" + stub + "'");
    s.side = cfg.model.image_side;
    return s;
  }
  if (checkpoint.empty()) throw UsageError("need --checkpoint or --stub");
  s.model = load_model(read_checkpoint(checkpoint));
  if (cfg.model_specified) {
    const std::string diff = config_diff(cfg.model, s.model->config());
    if (!diff.empty()) throw DataError("model config does not match checkpoint '" + checkpoint + "': " + diff);
  }
  s.seg = std::make_unique<ModelSegmenter>(*s.model);
  s.side = s.model->config().image_side;
  return s;
}

std::vector<EvalSample> load_samples(const std::string& dir, std::size_t synth, std::size_t side,
                                     std::uint64_t seed) {
  if (!dir.empty()) {
    PairDataset ds = load_pair_dataset(dir, side);
    for (const auto& r : ds.rejects) std::cerr << "skipped " << r << '\n';
    if (ds.samples.empty()) throw DataError("no usable image/mask pairs in '" + dir + "'");
    return std::move(ds.samples);
  }
  if (synth == 0) throw UsageError("need a dataset: --data-dir or --synth N > 0");
  std::vector<EvalSample> out;
  char id[32];
  for (auto& s : synth_dataset(synth, side, seed)) {
    std::snprintf(id, sizeof id, "synth_%04zu", out.size());
    out.push_back({id, std::move(s.image), std::move(s.gt)});
  }
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory '" + dir + "'");
}

// ---------------------------------------------------------------- commands

struct TrainArgs {
  CommonFlags common;
  std::string out_dir, data_dir, resume;
  std::size_t steps = 0, batch = 0, synth = 0, every = 0;
  double lr = 0.0;
  CLI::Option *steps_opt, *batch_opt, *synth_opt, *lr_opt, *dir_opt;
};

int cmd_train(TrainArgs& a) {
  CliConfig cfg = load_config(a.common);
  if (a.steps_opt->count()) cfg.train.steps = a.steps;
  if (a.batch_opt->count()) cfg.train.batch_size = a.batch;
  if (a.lr_opt->count()) cfg.train.adam.lr = a.lr;
  if (a.synth_opt->count()) cfg.synth = a.synth;
  if (a.dir_opt->count()) cfg.data_dir = a.data_dir;
  if (cfg.train.lr_drop_step > cfg.train.steps) cfg.train.lr_drop_step = cfg.train.steps;
  finalize(cfg);

  std::vector<SynthSample> data;
  for (auto& s : load_samples(cfg.data_dir, cfg.synth, cfg.model.image_side, cfg.seed))
    data.push_back({std::move(s.image), std::move(s.gt), ShapeKind::Ellipse});

  ensure_dir(a.out_dir);
  const fs::path out(a.out_dir);
  {
    std::ofstream f(out / "config.json");
    f << cfg.to_json().dump(2) << '\n';
    if (!f) throw DataError("cannot write to '" + a.out_dir + "'");
  }

  Rng init(cfg.seed);
  ICMFormer model(cfg.model, init);
  Trainer trainer(model, cfg.train, std::move(data));
  if (!a.resume.empty()) trainer.restore(read_checkpoint(a.resume));

  std::ofstream log(out / "train.log", a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw DataError("cannot write to '" + a.out_dir + "'");
  StepStats last;
  while (trainer.steps_done() < cfg.train.steps) {
    last = trainer.step();
    log << json(last).dump() << '\n';
    if (a.every && trainer.steps_done() % a.every == 0 && trainer.steps_done() < cfg.train.steps) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06zu.ckpt", trainer.steps_done());
      write_checkpoint((out / name).string(), trainer.checkpoint());
    }
  }
  log.flush();
  write_checkpoint((out / "model.ckpt").string(), trainer.checkpoint());
  std::cout << "trained to step " << trainer.steps_done() << ", last loss " << last.loss << ", wrote "
            << (out / "model.ckpt").string() << '\n';
  return kOk;
}

struct EvalArgs {
  CommonFlags common;
  std::string checkpoint, stub, data_dir, out_json, out_csv;
  std::size_t synth = 0, max_clicks = 20, side = 0;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<double> thresholds{0.85, 0.90};
  bool oracle = false;
  CLI::Option* side_opt;
};

int cmd_eval(EvalArgs& a) {
  CliConfig cfg = load_config(a.common);
  if (a.side_opt->count()) cfg.model.image_side = a.side;
  finalize(cfg);
  if (a.oracle) {
    if (!a.stub.empty() && a.stub != "oracle") throw UsageError("--oracle conflicts with --stub " + a.stub);
    a.stub = "oracle";
  }
  if (!a.data_dir.empty() && a.synth) throw UsageError("--data-dir and --synth are mutually exclusive");
  Source src = make_source(a.checkpoint, a.stub, cfg);
  const auto samples = load_samples(a.data_dir, a.synth, src.side, cfg.seed);

  EvalOptions opts;
  opts.max_clicks = a.max_clicks;
  opts.thresholds = a.thresholds;
  const auto records = evaluate_dataset(*src.seg, samples, opts, a.workers);
  const EvalSummary s = summarize(records, a.max_clicks);

  std::printf("%-8s %-8s %-8s %-8s %s\n", "NoC@85", "NoC@90", "NoF@85", "NoF@90", "instances");
  std::printf("%-8.2f %-8.2f %-8zu %-8zu %zu\n", s.noc85, s.noc90, s.nof85, s.nof90, s.n_instances);
  for (double t : a.thresholds) {
    if (t == 0.85 || t == 0.90) continue;
    std::printf("NoC@%g %.2f  NoF@%g %zu\n", t * 100, noc(records, t, a.max_clicks), t * 100, nof(records, t));
  }
  if (!a.out_json.empty()) write_file(a.out_json, json(s).dump(2) + "\n");
  if (!a.out_csv.empty()) write_file(a.out_csv, records_csv(records));
  return kOk;
}

struct SimulateArgs {
  CommonFlags common;
  std::string checkpoint, stub, image, gt, clicks, data_dir, out;
  std::size_t synth = 0, max_clicks = 20, side = 0;
  CLI::Option* side_opt;
};

/// Applies a fixed click sequence, predicting after each click.
EvalRecord replay(const Segmenter& seg, const EvalSample& s, const std::vector<Click>& clicks) {
  EvalRecord r;
  r.instance_id = s.id;
  InteractionState st;
  for (const auto& c : clicks) {
    st.add_click(c, s.gt.height, s.gt.width);
    r.clicks.push_back(st.clicks.back());
    const BitMask pred = binarize(seg.predict(s.image, st, &s.gt));
    r.ious.push_back(iou(pred, s.gt));
    st.prev_mask = pred;
  }
  return r;
}

int cmd_simulate(SimulateArgs& a) {
  CliConfig cfg = load_config(a.common);
  if (a.side_opt->count()) cfg.model.image_side = a.side;
  finalize(cfg);
  Source src = make_source(a.checkpoint, a.stub, cfg);
  std::vector<EvalSample> samples;
  if (!a.image.empty()) {
    if (a.gt.empty()) throw UsageError("--image needs --gt");
    const Image8 img = decode_png(read_file(a.image), 3), g = decode_png(read_file(a.gt), 1);
    if (img.width != g.width || img.height != g.height) throw DataError("--gt size differs from --image");
    samples.push_back({fs::path(a.image).stem().string(),
                       resize_bilinear(pad_to_square(image_to_tensor(img)), src.side, src.side),
                       resize_nearest(pad_to_square(gray_to_mask(g)), src.side, src.side)});
  } else {
    samples = load_samples(a.data_dir, a.synth, src.side, cfg.seed);
  }

  std::vector<Click> fixed;
  if (!a.clicks.empty()) {
    const json j = json::parse(read_file(a.clicks), nullptr, false);
    if (j.is_discarded() || !j.is_array()) throw DataError("'" + a.clicks + "' must hold a JSON array of clicks");
    try {
      fixed = j.get<std::vector<Click>>();
    } catch (const json::exception& e) {
      throw DataError("'" + a.clicks + "': " + e.what());
    }
  }

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw DataError("cannot write '" + a.out + "'");
  }
  std::ostream& os = a.out.empty() ? std::cout : file;
  EvalOptions opts;
  opts.max_clicks = a.max_clicks;
  for (const auto& s : samples) {
    const EvalRecord r = fixed.empty() ? evaluate_instance(*src.seg, s.image, s.gt, opts, s.id) : replay(*src.seg, s, fixed);
    os << json(r).dump() << '\n';
  }
  return kOk;
}

struct GradcheckArgs {
  CommonFlags common;
  std::size_t n_params = 20;
  double perturb = 0.05;
  std::string fault;
  double fault_factor = 1.5;
};

int cmd_gradcheck(GradcheckArgs& a) {
  CliConfig cfg = load_config(a.common);
  finalize(cfg);
  if (cfg.model.dim > 128)
    throw UsageError("gradcheck refuses dim " + std::to_string(cfg.model.dim) + " > 128; use a tiny config");
  if (a.n_params == 0) {
    std::cerr << "warning: --n-params 0 checks nothing\n";
    std::cout << "PASS (vacuous: 0 parameters checked)\n";
    return kOk;
  }
  ModelGradcheckOptions o;
  o.n_params = a.n_params;
  o.perturb = a.perturb;
  o.seed = cfg.seed;
  if (!a.fault.empty()) set_backward_fault(a.fault, a.fault_factor);
  const GradCheckReport r = gradcheck_model(cfg.model, o);
  set_backward_fault("");
  std::printf("%s max_rel_err=%.3e over %zu parameters (worst: %s)\n", r.passed ? "PASS" : "FAIL",
              r.max_rel_error, r.checked, r.worst_site.c_str());
  return r.passed ? kOk : kNumeric;
}

struct SynthArgs {
  CommonFlags common;
  std::string out_dir;
  std::size_t n = 8, side = 0;
  CLI::Option* side_opt;
};

int cmd_synth(SynthArgs& a) {
  CliConfig cfg = load_config(a.common);
  if (a.side_opt->count()) cfg.model.image_side = a.side;
  finalize(cfg);
  ensure_dir(a.out_dir);
  std::size_t i = 0;
  char name[32];
  for (const auto& s : synth_dataset(a.n, cfg.model.image_side, cfg.seed)) {
    std::snprintf(name, sizeof name, "synth_%04zu", i++);
    const fs::path base = fs::path(a.out_dir) / name;
    write_file(base.string() + ".png", encode_png(tensor_to_image(s.image)));
    write_file(base.string() + "_mask.png", encode_png(mask_to_gray(s.gt)));
  }
  std::cout << "wrote " << a.n << " image/mask pairs to " << a.out_dir << '\n';
  return kOk;
}

struct ServeArgs {
  CommonFlags common;
  std::string checkpoint, stub, host = "127.0.0.1";
  int port = 8080;
  std::size_t max_sessions = 64, ttl_minutes = 30, side = 0;
  CLI::Option* side_opt;
};

int cmd_serve(ServeArgs& a) {
  CliConfig cfg = load_config(a.common);
  if (a.side_opt->count()) cfg.model.image_side = a.side;
  finalize(cfg);
  Source src = make_source(a.checkpoint, a.stub, cfg);
  ServiceOptions opts;
  opts.model_side = src.side;
  opts.max_sessions = a.max_sessions;
  opts.idle_ttl = std::chrono::minutes(a.ttl_minutes);
  SessionStore store(*src.seg, opts);
  httplib::Server server;
  server.set_payload_max_length(64u << 20);
  install_routes(server, store);
  const int port = a.port == 0 ? server.bind_to_any_port(a.host) : (server.bind_to_port(a.host, a.port) ? a.port : -1);
  if (port < 0) throw DataError("cannot bind " + a.host + ":" + std::to_string(a.port));
  std::cout << "listening on " << a.host << ':' << port << std::endl;
  server.listen_after_bind();
  return kOk;
}

void add_source(CLI::App* app, std::string& checkpoint, std::string& stub) {
  app->add_option("--checkpoint", checkpoint, "Model checkpoint");
  app->add_option("--stub", stub, "Stand-in segmenter instead of a model")
      ->check(CLI::IsMember({"oracle", "empty", "quadrant"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive segmentation with cross-modality vision transformers"};
  app.require_subcommand(1);

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoints");
  add_common(train, tr.common);
  train->add_option("--out-dir", tr.out_dir, "Output directory")->required();
  tr.steps_opt = train->add_option("--steps", tr.steps, "Training steps");
  tr.batch_opt = train->add_option("--batch-size", tr.batch, "Samples per step");
  tr.lr_opt = train->add_option("--lr", tr.lr, "Initial learning rate");
  tr.synth_opt = train->add_option("--synth", tr.synth, "Size of the synthetic training set");
  tr.dir_opt = train->add_option("--data-dir", tr.data_dir, "Train on name.png/name_mask.png pairs");
  train->add_option("--checkpoint-every", tr.every, "Also checkpoint every N steps");
  train->add_option("--resume", tr.resume, "Continue from a training checkpoint")->check(CLI::ExistingFile);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Simulated-click evaluation (NoC / NoF)");
  add_common(eval, ev.common);
  add_source(eval, ev.checkpoint, ev.stub);
  eval->add_flag("--oracle", ev.oracle, "Same as --stub oracle");
  eval->add_option("--data-dir", ev.data_dir, "Directory of name.png/name_mask.png pairs");
  eval->add_option("--synth", ev.synth, "Evaluate on N synthetic images");
  eval->add_option("--max-clicks", ev.max_clicks, "Click budget per instance")->check(CLI::PositiveNumber);
  eval->add_option("--thresholds", ev.thresholds, "IoU thresholds")->expected(1, 8);
  eval->add_option("--workers", ev.workers, "Worker threads")->check(CLI::PositiveNumber);
  ev.side_opt = eval->add_option("--image-side", ev.side, "Input side for stubs");
  eval->add_option("--out-json", ev.out_json, "Write the summary JSON here");
  eval->add_option("--out-csv", ev.out_csv, "Write per-instance rows here");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Replay clicks and print per-click IoU as JSON lines");
  add_common(simulate, sim.common);
  add_source(simulate, sim.checkpoint, sim.stub);
  simulate->add_option("--image", sim.image, "Image PNG")->check(CLI::ExistingFile);
  simulate->add_option("--gt", sim.gt, "Ground-truth mask PNG")->check(CLI::ExistingFile);
  simulate->add_option("--clicks", sim.clicks, "JSON array of clicks (model coordinates) to replay")
      ->check(CLI::ExistingFile);
  simulate->add_option("--data-dir", sim.data_dir, "Directory of name.png/name_mask.png pairs");
  simulate->add_option("--synth", sim.synth, "Use N synthetic images");
  simulate->add_option("--max-clicks", sim.max_clicks, "Click budget for simulated clicks")
      ->check(CLI::PositiveNumber);
  simulate->add_option("--out", sim.out, "Write JSON lines here instead of stdout");
  sim.side_opt = simulate->add_option("--image-side", sim.side, "Input side for stubs");

  GradcheckArgs gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the full training loss");
  add_common(gradcheck, gc.common);
  gradcheck->add_option("--n-params", gc.n_params, "Number of sampled parameters");
  gradcheck->add_option("--perturb", gc.perturb, "Noise added to parameters before checking");
  // Test fixture: corrupts one backward rule so the check must fail.
  gradcheck->add_option("--inject-fault", gc.fault)->group("");
  gradcheck->add_option("--fault-factor", gc.fault_factor)->group("");

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Write a synthetic image/mask dataset");
  add_common(synth, sy.common);
  synth->add_option("--out-dir", sy.out_dir, "Output directory")->required();
  synth->add_option("-n,--count", sy.n, "Number of images");
  sy.side_opt = synth->add_option("--image-side", sy.side, "Image side (default: model image_side)");

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "HTTP session service for interactive annotation");
  add_common(serve, sv.common);
  add_source(serve, sv.checkpoint, sv.stub);
  serve->add_option("--host", sv.host, "Bind address");
  serve->add_option("--port", sv.port, "Port (0 picks a free one)");
  serve->add_option("--max-sessions", sv.max_sessions, "Session cap (least recently used is evicted)")
      ->check(CLI::PositiveNumber);
  serve->add_option("--ttl-minutes", sv.ttl_minutes, "Idle session lifetime");
  sv.side_opt = serve->add_option("--image-side", sv.side, "Input side for stubs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(tr);
    if (*eval) return cmd_eval(ev);
    if (*simulate) return cmd_simulate(sim);
    if (*gradcheck) return cmd_gradcheck(gc);
    if (*synth) return cmd_synth(sy);
    if (*serve) return cmd_serve(sv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const json::exception& e) {
    std::cerr << "error: bad config value: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
