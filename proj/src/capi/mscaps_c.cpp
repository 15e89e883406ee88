#include "mscaps/mscaps.h"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "mscaps/error.hpp"
#include "mscaps/experiments.hpp"
#include "mscaps/gradcheck.hpp"
#include "mscaps/pgm.hpp"

struct mscaps_scene {
  mscaps::ScenePair scene;
};

struct mscaps_model {
  mscaps::ModelArtifact model;
  std::vector<mscaps::EpochStats> trace;
};

struct mscaps_map {
  mscaps::ChangeMap map;
};

namespace {

thread_local std::string g_last_error;

mscaps_status to_status(mscaps::ErrorCode code) {
  switch (code) {
    case mscaps::ErrorCode::kOk: return MSCAPS_OK;
    case mscaps::ErrorCode::kInvalidArgument: return MSCAPS_ERR_INVALID_ARGUMENT;
    case mscaps::ErrorCode::kShapeMismatch: return MSCAPS_ERR_SHAPE;
    case mscaps::ErrorCode::kNonFinite: return MSCAPS_ERR_NON_FINITE;
    case mscaps::ErrorCode::kIo: return MSCAPS_ERR_IO;
    case mscaps::ErrorCode::kCorrupt: return MSCAPS_ERR_CORRUPT;
    case mscaps::ErrorCode::kVersionMismatch: return MSCAPS_ERR_VERSION;
    case mscaps::ErrorCode::kState: return MSCAPS_ERR_STATE;
    case mscaps::ErrorCode::kInternal: return MSCAPS_ERR_INTERNAL;
  }
  return MSCAPS_ERR_INTERNAL;
}

template <typename Fn>
mscaps_status guard(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return MSCAPS_OK;
  } catch (const mscaps::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return MSCAPS_ERR_INTERNAL;
}

void need(const void* p, const char* what) {
  if (!p) mscaps::fail(mscaps::ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

mscaps::RunConfig run_config(const mscaps_train_options& o) {
  using mscaps::ErrorCode;
  mscaps::require(o.variant >= MSCAPS_VARIANT_CAPSNET && o.variant <= MSCAPS_VARIANT_FULL,
                  ErrorCode::kInvalidArgument, "unknown variant");
  mscaps::RunConfig c;
  c.network.variant = static_cast<mscaps::Variant>(o.variant);
  c.network.input = o.input_pair ? mscaps::InputMode::kPair : mscaps::InputMode::kDi;
  c.network.patch = o.patch;
  c.network.route_grad = o.route_grad_full ? mscaps::caps::RouteGrad::kFull : mscaps::caps::RouteGrad::kFinalOnly;
  c.network.shared_capsule_weights = o.shared_capsules != 0;
  c.network.afc.shared_attention = o.shared_attention != 0;
  c.network.routing_iterations = o.routing_iterations;
  c.network.transform_init = o.transform_init;
  c.network.afc.in_channels = c.network.in_channels();
  c.network.validate();
  c.train.epochs = o.epochs;
  c.train.batch = o.batch;
  c.train.adam.lr = o.learning_rate;
  c.train.seed = o.seed;
  c.train.threads = o.threads ? o.threads : 1;
  mscaps::require(o.learning_rate > 0.0, ErrorCode::kInvalidArgument, "learning rate must be > 0");
  mscaps::require(o.batch >= 1, ErrorCode::kInvalidArgument, "batch size must be >= 1");
  c.samples = o.samples;
  c.balanced = o.balanced != 0;
  mscaps::require(o.eps >= 0.0, ErrorCode::kInvalidArgument, "eps must be >= 0");
  c.eps = o.eps;
  return c;
}

mscaps_metrics to_c(const mscaps::MetricsReport& r) { return {r.fp, r.fn, r.tp, r.tn, r.oe, r.pcc, r.kc}; }

mscaps::MetricsReport from_c(const mscaps_metrics& m) {
  mscaps::MetricsReport r;
  r.fp = m.fp;
  r.fn = m.fn;
  r.tp = m.tp;
  r.tn = m.tn;
  r.oe = m.oe;
  r.pcc = m.pcc;
  r.kc = m.kc;
  return r;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  mscaps::require(static_cast<bool>(out), mscaps::ErrorCode::kIo, "cannot write " + path);
  out << text;
  mscaps::require(static_cast<bool>(out), mscaps::ErrorCode::kIo, "failed writing " + path);
}

void emit(mscaps_line_fn fn, void* user, const std::string& line) {
  if (fn) fn(line.c_str(), user);
}

}  // namespace

extern "C" {

const char* mscaps_last_error(void) { return g_last_error.c_str(); }

const char* mscaps_version(void) { return "1.0.0"; }

const char* mscaps_variant_name(mscaps_variant variant) {
  switch (variant) {
    case MSCAPS_VARIANT_CAPSNET: return "capsnet";
    case MSCAPS_VARIANT_NO_AFC: return "no_afc";
    case MSCAPS_VARIANT_NO_MULTISCALE: return "no_multiscale";
    case MSCAPS_VARIANT_FULL: return "full";
  }
  return "unknown";
}

mscaps_status mscaps_parse_variant(const char* name, mscaps_variant* out) {
  return guard([&] {
    need(name, "name");
    need(out, "out");
    *out = static_cast<mscaps_variant>(mscaps::parse_variant(name));
  });
}

void mscaps_synth_defaults(mscaps_synth_params* p) {
  if (!p) return;
  const mscaps::SynthParams d;
  p->size = static_cast<uint32_t>(d.size);
  p->regions = static_cast<uint32_t>(d.regions);
  p->looks = d.looks;
  p->contrast = d.contrast;
  p->seed = d.seed;
}

mscaps_status mscaps_scene_synth(const mscaps_synth_params* params, mscaps_scene** out) {
  return guard([&] {
    need(params, "params");
    need(out, "out");
    *out = nullptr;
    mscaps::SynthParams p;
    p.size = params->size;
    p.regions = params->regions;
    p.looks = params->looks;
    p.contrast = params->contrast;
    p.seed = params->seed;
    *out = new mscaps_scene{mscaps::synth_scene(p)};
  });
}

mscaps_status mscaps_scene_load(const char* t1_path, const char* t2_path, const char* gt_path, mscaps_scene** out) {
  return guard([&] {
    need(t1_path, "t1_path");
    need(t2_path, "t2_path");
    need(out, "out");
    *out = nullptr;
    *out = new mscaps_scene{mscaps::load_scene(t1_path, t2_path, gt_path ? gt_path : "")};
  });
}

mscaps_status mscaps_scene_save(const mscaps_scene* scene, const char* dir) {
  return guard([&] {
    need(scene, "scene");
    need(dir, "dir");
    mscaps::save_scene(scene->scene, dir);
  });
}

mscaps_status mscaps_scene_size(const mscaps_scene* scene, size_t* height, size_t* width) {
  return guard([&] {
    need(scene, "scene");
    if (height) *height = scene->scene.height();
    if (width) *width = scene->scene.width();
  });
}

void mscaps_scene_free(mscaps_scene* scene) { delete scene; }

void mscaps_train_defaults(mscaps_train_options* o) {
  if (!o) return;
  const mscaps::RunConfig d;
  o->variant = MSCAPS_VARIANT_FULL;
  o->patch = static_cast<uint32_t>(d.network.patch);
  o->samples = static_cast<uint32_t>(d.samples);
  o->epochs = static_cast<uint32_t>(d.train.epochs);
  o->batch = static_cast<uint32_t>(d.train.batch);
  o->learning_rate = d.train.adam.lr;
  o->seed = d.train.seed;
  o->threads = 1;
  o->balanced = d.balanced ? 1 : 0;
  o->input_pair = 0;
  o->route_grad_full = 0;
  o->shared_capsules = 0;
  o->shared_attention = 0;
  o->routing_iterations = static_cast<uint32_t>(d.network.routing_iterations);
  o->transform_init = d.network.transform_init;
  o->eps = d.eps;
}

mscaps_status mscaps_train(const mscaps_scene* scene, const mscaps_train_options* options, mscaps_epoch_fn on_epoch,
                           void* user, mscaps_model** out) {
  return guard([&] {
    need(scene, "scene");
    need(options, "options");
    need(out, "out");
    *out = nullptr;
    const mscaps::RunConfig cfg = run_config(*options);
    mscaps::EpochCallback cb;
    if (on_epoch)
      cb = [&](const mscaps::EpochStats& s) {
        on_epoch(static_cast<uint32_t>(s.epoch), s.loss, s.accuracy, user);
      };
    const mscaps::DifferenceImage di = mscaps::log_ratio_di(scene->scene, cfg.eps);
    mscaps::ModelArtifact model = mscaps::init_model(cfg.network, cfg.train.seed);
    model.di_lo = di.lo;
    model.di_hi = di.hi;
    model.eps = cfg.eps;
    double mx = 0.0;
    for (double v : scene->scene.t1.data()) mx = std::max(mx, v);
    for (double v : scene->scene.t2.data()) mx = std::max(mx, v);
    model.intensity_scale = mx > 0.0 ? mx : 1.0;
    const mscaps::SampleSet samples = mscaps::training_samples(scene->scene, di, cfg);
    mscaps::TrainResult r = mscaps::train(samples, std::move(model), cfg.train, cb);
    *out = new mscaps_model{std::move(r.model), std::move(r.trace)};
  });
}

mscaps_status mscaps_model_write_trace(const mscaps_model* model, const char* path) {
  return guard([&] {
    need(model, "model");
    need(path, "path");
    std::ostringstream os;
    os << "epoch,loss,train_acc\n";
    char buf[96];
    for (const auto& s : model->trace) {
      std::snprintf(buf, sizeof buf, "%zu,%.10g,%.6f\n", s.epoch, s.loss, s.accuracy);
      os << buf;
    }
    write_text(path, os.str());
  });
}

mscaps_status mscaps_model_save(const mscaps_model* model, const char* path) {
  return guard([&] {
    need(model, "model");
    need(path, "path");
    mscaps::save_model(model->model, path);
  });
}

mscaps_status mscaps_model_load(const char* path, mscaps_model** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    *out = new mscaps_model{mscaps::load_model(path), {}};
  });
}

mscaps_status mscaps_model_patch_size(const mscaps_model* model, uint32_t* patch) {
  return guard([&] {
    need(model, "model");
    need(patch, "patch");
    *patch = static_cast<uint32_t>(model->model.network.patch);
  });
}

void mscaps_model_free(mscaps_model* model) { delete model; }

mscaps_status mscaps_predict(const mscaps_model* model, const mscaps_scene* scene, uint32_t threads, mscaps_map** out) {
  return guard([&] {
    need(model, "model");
    need(scene, "scene");
    need(out, "out");
    *out = nullptr;
    *out = new mscaps_map{mscaps::predict_scene(model->model, scene->scene, threads ? threads : 1)};
  });
}

mscaps_status mscaps_map_save(const mscaps_map* map, const char* path) {
  return guard([&] {
    need(map, "map");
    need(path, "path");
    mscaps::write_pgm(path, mscaps::from_change_map(map->map));
  });
}

mscaps_status mscaps_map_load(const char* path, mscaps_map** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    *out = new mscaps_map{mscaps::to_change_map(mscaps::read_pgm(path))};
  });
}

mscaps_status mscaps_map_size(const mscaps_map* map, size_t* height, size_t* width) {
  return guard([&] {
    need(map, "map");
    if (height) *height = map->map.height;
    if (width) *width = map->map.width;
  });
}

mscaps_status mscaps_map_copy(const mscaps_map* map, uint8_t* dst, size_t capacity) {
  return guard([&] {
    need(map, "map");
    need(dst, "dst");
    mscaps::require(capacity >= map->map.labels.size(), mscaps::ErrorCode::kInvalidArgument,
                    "destination buffer too small");
    std::memcpy(dst, map->map.labels.data(), map->map.labels.size());
  });
}

void mscaps_map_free(mscaps_map* map) { delete map; }

mscaps_status mscaps_evaluate(const mscaps_map* pred, const mscaps_map* gt, mscaps_metrics* out) {
  return guard([&] {
    need(pred, "pred");
    need(gt, "gt");
    need(out, "out");
    *out = to_c(mscaps::evaluate(pred->map, gt->map));
  });
}

mscaps_status mscaps_metrics_write(const mscaps_metrics* metrics, const char* path) {
  return guard([&] {
    need(metrics, "metrics");
    need(path, "path");
    const mscaps::MetricsReport r = from_c(*metrics);
    write_text(path, mscaps::to_text(r));
    write_text(std::string(path) + ".json", mscaps::to_json(r));
  });
}

size_t mscaps_metrics_format(const mscaps_metrics* metrics, char* dst, size_t capacity) {
  if (!metrics) return 0;
  const std::string text = mscaps::to_text(from_c(*metrics));
  if (dst && capacity) {
    const std::size_t n = std::min(capacity - 1, text.size());
    std::memcpy(dst, text.data(), n);
    dst[n] = '\0';
  }
  return text.size() + 1;
}

mscaps_status mscaps_ablate(const mscaps_scene* scene, const mscaps_train_options* base, const uint64_t* seeds,
                            size_t seed_count, const char* csv_path, mscaps_line_fn on_line, void* user) {
  return guard([&] {
    need(scene, "scene");
    need(base, "base");
    need(seeds, "seeds");
    need(csv_path, "csv_path");
    const mscaps::RunConfig cfg = run_config(*base);
    const auto rows = mscaps::run_ablation(scene->scene, cfg, std::vector<uint64_t>(seeds, seeds + seed_count));
    write_text(csv_path, mscaps::ablation_csv(rows));
    for (const auto& r : rows) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "seed=%llu variant=%s pcc=%.4f kc=%.4f",
                    static_cast<unsigned long long>(r.seed), std::string(mscaps::variant_name(r.variant)).c_str(),
                    r.metrics.pcc, r.metrics.kc);
      emit(on_line, user, buf);
    }
    emit(on_line, user, "mean pcc: " + mscaps::ablation_summary(rows));
  });
}

mscaps_status mscaps_patch_study(const mscaps_scene* scene, const mscaps_train_options* base, const uint32_t* patches,
                                 size_t patch_count, const uint64_t* seeds, size_t seed_count, const char* csv_path,
                                 mscaps_line_fn on_line, void* user) {
  return guard([&] {
    need(scene, "scene");
    need(base, "base");
    need(patches, "patches");
    need(seeds, "seeds");
    need(csv_path, "csv_path");
    const mscaps::RunConfig cfg = run_config(*base);
    const auto rows = mscaps::run_patch_study(scene->scene, cfg, std::vector<std::size_t>(patches, patches + patch_count),
                                              std::vector<uint64_t>(seeds, seeds + seed_count));
    write_text(csv_path, mscaps::patch_study_csv(rows));
    for (const auto& r : rows) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "patch=%zu seed=%llu pcc=%.4f kc=%.4f", r.patch,
                    static_cast<unsigned long long>(r.seed), r.metrics.pcc, r.metrics.kc);
      emit(on_line, user, buf);
    }
    emit(on_line, user, std::string("monotone-plateau (0.5 pt slack): ") +
                            (mscaps::monotone_plateau(rows, 0.5) ? "yes" : "no"));
  });
}

mscaps_status mscaps_gradcheck(uint64_t seed, double tolerance, mscaps_line_fn on_line, void* user) {
  bool all_passed = true;
  const mscaps_status st = guard([&] {
    mscaps::require(tolerance > 0.0, mscaps::ErrorCode::kInvalidArgument, "tolerance must be > 0");
    const auto results = mscaps::run_gradcheck_suite(seed, tolerance, 10.0 * tolerance);
    for (const auto& r : results) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-4s %-24s rel_err=%.3e tol=%.1e", r.passed ? "ok" : "FAIL", r.name.c_str(),
                    r.rel_error, r.tolerance);
      emit(on_line, user, buf);
      all_passed = all_passed && r.passed;
    }
  });
  if (st != MSCAPS_OK) return st;
  if (!all_passed) {
    g_last_error = "gradient check failed";
    return MSCAPS_ERR_CHECK_FAILED;
  }
  return MSCAPS_OK;
}

}  // extern "C"
