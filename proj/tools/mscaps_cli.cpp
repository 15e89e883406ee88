// mscaps: synth | train | predict | evaluate | ablate | gradcheck
//
// Every flag can also be given in a key=value file passed with --config;
// flags on the command line win.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mscaps/mscaps.h"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct RuntimeFailure {
  std::string message;
};

void check(mscaps_status st, const std::string& context) {
  if (st != MSCAPS_OK) throw RuntimeFailure{context + ": " + mscaps_last_error()};
}

struct SceneDeleter {
  void operator()(mscaps_scene* s) const { mscaps_scene_free(s); }
};
struct ModelDeleter {
  void operator()(mscaps_model* m) const { mscaps_model_free(m); }
};
struct MapDeleter {
  void operator()(mscaps_map* m) const { mscaps_map_free(m); }
};
using ScenePtr = std::unique_ptr<mscaps_scene, SceneDeleter>;
using ModelPtr = std::unique_ptr<mscaps_model, ModelDeleter>;
using MapPtr = std::unique_ptr<mscaps_map, MapDeleter>;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// key=value lines, '#' comments. Keys are flag names without dashes.
std::vector<std::string> config_args(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot read " + path);
  std::vector<std::string> args;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError("--config", path + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty() || key == "config")
      throw CLI::ValidationError("--config", path + ":" + std::to_string(lineno) + ": bad key");
    args.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
  }
  return args;
}

std::string find_config(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw CLI::ValidationError("--config", "missing file name");
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    }
  }
  return path;
}

template <typename T>
std::vector<T> parse_list(const std::string& flag, const std::string& text) {
  std::vector<T> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const std::string item = trim(text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      throw CLI::ValidationError(flag, "expected a comma-separated list of non-negative integers");
    out.push_back(static_cast<T>(std::stoull(item)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

uint32_t resolve_threads(uint32_t flag) {
  if (flag) return flag;
  if (const char* env = std::getenv("MSCAPS_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<uint32_t>(v);
  }
  return 1;
}

const CLI::Validator kOddPatch(
    [](std::string& s) -> std::string {
      const long v = std::strtol(s.c_str(), nullptr, 10);
      if (v < 5 || v % 2 == 0) return "patch size must be odd and >= 5, got " + s;
      return {};
    },
    "ODD>=5");

// Training flags shared by train and ablate.
struct TrainFlags {
  mscaps_train_options opts{};
  std::string variant = "full";
  std::string input = "di";
  std::string route_grad = "final";
  bool balanced = true;
  bool shared_capsules = false;
  bool shared_attention = false;

  TrainFlags() { mscaps_train_defaults(&opts); }

  void add(CLI::App* cmd, bool with_variant) {
    cmd->add_option("--patch", opts.patch, "Patch size r (odd)")->check(kOddPatch);
    cmd->add_option("--samples", opts.samples, "Training samples drawn from the ground truth")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--epochs", opts.epochs, "Training epochs");
    cmd->add_option("--batch", opts.batch, "Mini-batch size")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", opts.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", opts.seed, "Seed for initialization, sampling and shuffling");
    cmd->add_option("--threads", opts.threads, "Worker threads (default: MSCAPS_THREADS or 1)");
    cmd->add_option("--balanced", balanced, "Sample changed/unchanged 50/50");
    cmd->add_option("--input", input, "Network input")->check(CLI::IsMember({"di", "pair"}));
    cmd->add_option("--routing-iterations", opts.routing_iterations, "Dynamic routing iterations")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--route-grad", route_grad, "Gradient path through routing")
        ->check(CLI::IsMember({"final", "full"}));
    cmd->add_option("--shared-capsules", shared_capsules, "Share capsule transforms across scales");
    cmd->add_option("--shared-attention", shared_attention, "One attention kernel for all AFC branches");
    cmd->add_option("--transform-init", opts.transform_init, "Uniform init bound of capsule transforms")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--eps", opts.eps, "Log-ratio offset")->check(CLI::NonNegativeNumber);
    if (with_variant)
      cmd->add_option("--variant", variant, "Network variant")
          ->check(CLI::IsMember({"full", "no_afc", "no_multiscale", "capsnet"}));
  }

  mscaps_train_options resolve() {
    check(mscaps_parse_variant(variant.c_str(), &opts.variant), "variant");
    opts.input_pair = input == "pair";
    opts.route_grad_full = route_grad == "full";
    opts.balanced = balanced;
    opts.shared_capsules = shared_capsules;
    opts.shared_attention = shared_attention;
    opts.threads = resolve_threads(opts.threads);
    return opts;
  }
};

void print_line(const char* line, void*) { std::printf("%s\n", line); }

int cmd_synth(const std::string& out, const mscaps_synth_params& p) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  ScenePtr scene;
  {
    mscaps_scene* raw = nullptr;
    check(mscaps_scene_synth(&p, &raw), "synth");
    scene.reset(raw);
  }
  check(mscaps_scene_save(scene.get(), out.c_str()), "synth");
  const std::string manifest = (std::filesystem::path(out) / "manifest.txt").string();
  std::FILE* f = std::fopen(manifest.c_str(), "wb");
  if (!f) throw RuntimeFailure{"synth: cannot write " + manifest};
  std::fprintf(f, "command=synth\nversion=%s\nsize=%u\nregions=%u\nlooks=%.17g\ncontrast=%.17g\nseed=%llu\n",
               mscaps_version(), p.size, p.regions, p.looks, p.contrast, static_cast<unsigned long long>(p.seed));
  std::fprintf(f, "files=t1.pgm,t2.pgm,gt.pgm\n");
  const bool ok = std::fclose(f) == 0;
  if (!ok) throw RuntimeFailure{"synth: failed writing " + manifest};
  std::printf("wrote %s/{t1,t2,gt}.pgm\n", out.c_str());
  return 0;
}

ScenePtr load_scene(const std::string& t1, const std::string& t2, const std::string& gt) {
  mscaps_scene* raw = nullptr;
  check(mscaps_scene_load(t1.c_str(), t2.c_str(), gt.empty() ? nullptr : gt.c_str(), &raw), "load scene");
  return ScenePtr(raw);
}

void print_epoch(uint32_t epoch, double loss, double acc, void*) {
  std::printf("epoch %u loss %.6f train_acc %.4f\n", epoch, loss, acc);
  std::fflush(stdout);
}

int cmd_train(const std::string& t1, const std::string& t2, const std::string& gt, const std::string& out,
              std::string trace, TrainFlags& flags) {
  const mscaps_train_options opts = flags.resolve();
  ScenePtr scene = load_scene(t1, t2, gt);
  mscaps_model* raw = nullptr;
  check(mscaps_train(scene.get(), &opts, print_epoch, nullptr, &raw), "train");
  ModelPtr model(raw);
  check(mscaps_model_save(model.get(), out.c_str()), "train");
  if (trace.empty()) trace = out + ".trace.csv";
  check(mscaps_model_write_trace(model.get(), trace.c_str()), "train");
  std::printf("wrote %s and %s\n", out.c_str(), trace.c_str());
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& t1, const std::string& t2, const std::string& out,
                uint32_t threads) {
  mscaps_model* raw_model = nullptr;
  check(mscaps_model_load(model_path.c_str(), &raw_model), "predict");
  ModelPtr model(raw_model);
  ScenePtr scene = load_scene(t1, t2, "");
  mscaps_map* raw_map = nullptr;
  check(mscaps_predict(model.get(), scene.get(), resolve_threads(threads), &raw_map), "predict");
  MapPtr map(raw_map);
  check(mscaps_map_save(map.get(), out.c_str()), "predict");
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_evaluate(const std::string& pred_path, const std::string& gt_path, const std::string& out) {
  mscaps_map* raw = nullptr;
  check(mscaps_map_load(pred_path.c_str(), &raw), "evaluate: prediction");
  MapPtr pred(raw);
  raw = nullptr;
  check(mscaps_map_load(gt_path.c_str(), &raw), "evaluate: ground truth");
  MapPtr gt(raw);
  mscaps_metrics m{};
  check(mscaps_evaluate(pred.get(), gt.get(), &m), "evaluate");
  check(mscaps_metrics_write(&m, out.c_str()), "evaluate");
  std::string text(mscaps_metrics_format(&m, nullptr, 0), '\0');
  mscaps_metrics_format(&m, text.data(), text.size());
  std::fputs(text.c_str(), stdout);
  return 0;
}

int cmd_ablate(const std::string& dir, const std::string& seeds_text, const std::string& out,
               const std::string& patches_text, const std::string& sweep_out, TrainFlags& flags) {
  const auto seeds = parse_list<uint64_t>("--seeds", seeds_text);
  std::vector<uint32_t> patches;
  if (!patches_text.empty()) {
    patches = parse_list<uint32_t>("--patches", patches_text);
    for (auto p : patches)
      if (p < 5 || p % 2 == 0) throw CLI::ValidationError("--patches", "patch sizes must be odd and >= 5");
    if (sweep_out.empty()) throw CLI::ValidationError("--sweep-out", "required with --patches");
  }
  const mscaps_train_options opts = flags.resolve();
  const auto p = std::filesystem::path(dir);
  ScenePtr scene = load_scene((p / "t1.pgm").string(), (p / "t2.pgm").string(), (p / "gt.pgm").string());
  check(mscaps_ablate(scene.get(), &opts, seeds.data(), seeds.size(), out.c_str(), print_line, nullptr), "ablate");
  std::printf("wrote %s\n", out.c_str());
  if (!patches.empty()) {
    check(mscaps_patch_study(scene.get(), &opts, patches.data(), patches.size(), seeds.data(), seeds.size(),
                             sweep_out.c_str(), print_line, nullptr),
          "patch study");
    std::printf("wrote %s\n", sweep_out.c_str());
  }
  return 0;
}

int cmd_gradcheck(uint64_t seed, double tolerance) {
  const mscaps_status st = mscaps_gradcheck(seed, tolerance, print_line, nullptr);
  if (st == MSCAPS_ERR_CHECK_FAILED) {
    std::fprintf(stderr, "gradcheck: %s\n", mscaps_last_error());
    return kExitRuntime;
  }
  check(st, "gradcheck");
  std::printf("all gradient checks passed\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiscale capsule network change detection for SAR image pairs"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mscaps_version()));
  std::string config_path;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value file with defaults for any flag");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic two-date scene with ground truth");
  std::string synth_out;
  mscaps_synth_params synth_params{};
  mscaps_synth_defaults(&synth_params);
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--size", synth_params.size, "Image side length")->check(CLI::PositiveNumber);
  synth->add_option("--regions", synth_params.regions, "Number of changed regions");
  synth->add_option("--looks", synth_params.looks, "Number of looks L")->check(CLI::PositiveNumber);
  synth->add_option("--contrast", synth_params.contrast, "Backscatter gain inside changed regions")
      ->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_params.seed, "Random seed");
  add_config(synth);

  auto* train = app.add_subcommand("train", "Train a model on a scene with ground truth");
  std::string t1, t2, gt, model_out, trace_out;
  TrainFlags train_flags;
  train->add_option("--t1", t1, "First-date image (PGM)")->required();
  train->add_option("--t2", t2, "Second-date image (PGM)")->required();
  train->add_option("--gt", gt, "Ground-truth change mask (PGM, 0/255)")->required();
  train->add_option("--out", model_out, "Model file")->required();
  train->add_option("--trace", trace_out, "Loss trace CSV (default: <out>.trace.csv)");
  train_flags.add(train, true);
  add_config(train);

  auto* predict = app.add_subcommand("predict", "Classify every pixel of a scene");
  std::string model_in, map_out;
  uint32_t predict_threads = 0;
  predict->add_option("--model", model_in, "Model file")->required();
  predict->add_option("--t1", t1, "First-date image (PGM)")->required();
  predict->add_option("--t2", t2, "Second-date image (PGM)")->required();
  predict->add_option("--out", map_out, "Change map (PGM, 0/255)")->required();
  predict->add_option("--threads", predict_threads, "Worker threads (default: MSCAPS_THREADS or 1)");
  add_config(predict);

  auto* evaluate = app.add_subcommand("evaluate", "Compare a change map with ground truth");
  std::string pred_in, gt_in, report_out;
  evaluate->add_option("--pred", pred_in, "Predicted change map")->required();
  evaluate->add_option("--gt", gt_in, "Ground-truth change map")->required();
  evaluate->add_option("--out", report_out, "Report path (text; JSON goes to <out>.json)")->required();
  add_config(evaluate);

  auto* ablate = app.add_subcommand("ablate", "Train and score every network variant for each seed");
  std::string scene_dir, seeds_text, table_out, patches_text, sweep_out;
  TrainFlags ablate_flags;
  ablate->add_option("--scene", scene_dir, "Directory with t1.pgm, t2.pgm, gt.pgm")->required();
  ablate->add_option("--seeds", seeds_text, "Comma-separated seeds")->required();
  ablate->add_option("--out", table_out, "Ablation CSV")->required();
  ablate->add_option("--patches", patches_text, "Comma-separated patch sizes for a patch-size sweep");
  ablate->add_option("--sweep-out", sweep_out, "Patch-size sweep CSV");
  ablate_flags.add(ablate, false);
  add_config(ablate);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  uint64_t gc_seed = 1;
  double gc_tol = 1e-4;
  gradcheck->add_option("--seed", gc_seed, "Random seed");
  gradcheck->add_option("--tolerance", gc_tol, "Relative error bound for single ops")->check(CLI::PositiveNumber);
  add_config(gradcheck);

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    const std::string cfg = find_config(args);
    if (!cfg.empty() && !args.empty()) {
      auto extra = config_args(cfg);
      args.insert(args.begin() + 1, extra.begin(), extra.end());
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_out, synth_params);
    if (train->parsed()) return cmd_train(t1, t2, gt, model_out, trace_out, train_flags);
    if (predict->parsed()) return cmd_predict(model_in, t1, t2, map_out, predict_threads);
    if (evaluate->parsed()) return cmd_evaluate(pred_in, gt_in, report_out);
    if (ablate->parsed()) return cmd_ablate(scene_dir, seeds_text, table_out, patches_text, sweep_out, ablate_flags);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_tol);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  } catch (const RuntimeFailure& e) {
    std::cerr << "error: " << e.message << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
