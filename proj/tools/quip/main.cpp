// Copyright (c) the quip authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// quip: batch front end for training, restoration, the classical
// baseline, scoring, ablations and gradient verification.

#include <CLI11.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "quip/quip.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// Thrown to leave a command with an exit status and message.
struct Exit {
  int code;
  std::string message;
};

void check(quip_status status, const std::string& context) {
  if (status != QUIP_OK) throw Exit{status == QUIP_ERROR_ARGUMENT ? kExitUsage : kExitFailure,
                                    context + ": " + quip_last_error()};
}

struct ImageDeleter {
  void operator()(quip_image* p) const { quip_image_free(p); }
};
struct ModelDeleter {
  void operator()(quip_model* p) const { quip_model_free(p); }
};
struct ConfigDeleter {
  void operator()(quip_config* p) const { quip_config_free(p); }
};
struct ReportDeleter {
  void operator()(quip_report* p) const { quip_report_free(p); }
};
using ImagePtr = std::unique_ptr<quip_image, ImageDeleter>;
using ModelPtr = std::unique_ptr<quip_model, ModelDeleter>;
using ConfigPtr = std::unique_ptr<quip_config, ConfigDeleter>;
using ReportPtr = std::unique_ptr<quip_report, ReportDeleter>;

ImagePtr load_image(const fs::path& path) {
  quip_image* img = nullptr;
  check(quip_image_load(path.c_str(), &img), path.string());
  return ImagePtr(img);
}

bool is_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".pgm";
}

// Image files of a directory (sorted) or the single named file.
std::vector<fs::path> image_inputs(const fs::path& path, const char* what) {
  std::error_code ec;
  if (!fs::exists(path, ec)) throw Exit{kExitUsage, std::string(what) + " not found: " + path.string()};
  if (!fs::is_directory(path, ec)) return {path};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_regular_file() && is_image(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Exit{kExitUsage, std::string(what) + " contains no .png or .pgm images: " + path.string()};
  return out;
}

void require_directory(const fs::path& path, const char* what) {
  std::error_code ec;
  if (!fs::is_directory(path, ec)) throw Exit{kExitUsage, std::string(what) + " directory not found: " + path.string()};
}

void make_output_dir(const fs::path& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw Exit{kExitFailure, "cannot create output directory " + path.string() + ": " + ec.message()};
}

std::string score_text(double psnr, double ssim) {
  char buf[64];
  check(quip_format_score(psnr, ssim, buf, sizeof buf), "format");
  return buf;
}

std::size_t default_jobs() {
  if (const char* env = std::getenv("QUIP_JOBS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    std::cerr << "warning: ignoring QUIP_JOBS='" << env << "'\n";
  }
  return 1;
}

// Runs body(i) for i in [0, count) on up to `jobs` threads; the first
// failure is rethrown after all workers stop.
template <typename F>
void parallel_for(std::size_t count, std::size_t jobs, F body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  std::atomic<std::size_t> next{0};
  std::mutex mutex;
  std::optional<Exit> error;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < count;) {
      try {
        body(i);
      } catch (const Exit& e) {
        std::lock_guard<std::mutex> lock(mutex);
        if (!error) error = e;
        next = count;
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < jobs; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (error) throw *error;
}

struct Common {
  std::string config_file;
  std::size_t jobs = default_jobs();
  std::vector<std::string> overrides;
};

// --key=value pairs left over by the argument parser.
ConfigPtr build_config(const Common& common) {
  quip_config* raw = nullptr;
  check(quip_config_create(&raw), "config");
  ConfigPtr config(raw);
  if (!common.config_file.empty()) {
    std::error_code ec;
    if (!fs::exists(common.config_file, ec)) throw Exit{kExitUsage, "config file not found: " + common.config_file};
    check(quip_config_load(config.get(), common.config_file.c_str()), "config");
  }
  for (const std::string& arg : common.overrides) {
    if (arg.rfind("--", 0) != 0) throw Exit{kExitUsage, "unexpected argument '" + arg + "'"};
    const auto eq = arg.find('=');
    if (eq == std::string::npos) throw Exit{kExitUsage, "override '" + arg + "' must have the form --key=value"};
    const std::string key = arg.substr(2, eq - 2);
    check(quip_config_set(config.get(), key.c_str(), arg.substr(eq + 1).c_str()), "config");
  }
  check(quip_config_validate(config.get()), "config");
  for (std::size_t i = 0; i < quip_config_warning_count(config.get()); ++i) {
    char buf[512];
    if (quip_config_warning(config.get(), i, buf, sizeof buf) == QUIP_OK) std::cerr << "warning: " << buf << '\n';
  }
  return config;
}

std::string config_value(const quip_config* config, const char* key) {
  char buf[512];
  check(quip_config_get(config, key, buf, sizeof buf), key);
  return buf;
}

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("-c,--config", common.config_file, "Config file (key = value with [sections])");
  cmd->add_option("-j,--jobs", common.jobs, "Images processed in parallel (default: QUIP_JOBS or 1)")
      ->check(CLI::PositiveNumber);
  cmd->allow_extras();
}

std::vector<ImagePtr> load_all(const std::vector<fs::path>& paths) {
  std::vector<ImagePtr> out;
  for (const auto& p : paths) out.push_back(load_image(p));
  return out;
}

std::vector<const quip_image*> raw_pointers(const std::vector<ImagePtr>& images) {
  std::vector<const quip_image*> out;
  for (const auto& i : images) out.push_back(i.get());
  return out;
}

// ---- train

struct TrainArgs {
  std::string data, validation, out, model_name = "model.diva";
};

ReportPtr run_training(quip_config* config, quip_model* model, const std::vector<ImagePtr>& images,
                       const std::vector<ImagePtr>* validation, const fs::path& checkpoint, std::ostream* log_file) {
  struct Sink {
    std::ostream* file;
  } sink{log_file};
  auto log = [](const char* line, void* user) {
    std::cout << line << '\n' << std::flush;
    if (auto* f = static_cast<Sink*>(user)->file) *f << line << '\n' << std::flush;
  };
  const auto ptrs = raw_pointers(images);
  std::vector<const quip_image*> vptrs;
  if (validation) vptrs = raw_pointers(*validation);
  quip_report* report = nullptr;
  check(quip_train(config, model, ptrs.data(), ptrs.size(), validation ? vptrs.data() : nullptr, vptrs.size(),
                   checkpoint.c_str(), log, &sink, &report),
        "train");
  return ReportPtr(report);
}

int cmd_train(const TrainArgs& args, const Common& common) {
  require_directory(args.data, "training");
  if (!args.validation.empty()) require_directory(args.validation, "validation");
  ConfigPtr config = build_config(common);
  const auto images = load_all(image_inputs(args.data, "training directory"));
  std::optional<std::vector<ImagePtr>> validation;
  if (!args.validation.empty()) validation = load_all(image_inputs(args.validation, "validation directory"));
  make_output_dir(args.out);
  quip_model* raw = nullptr;
  check(quip_model_create(config.get(), &raw), "model");
  ModelPtr model(raw);
  char desc[512];
  check(quip_model_describe(model.get(), desc, sizeof desc), "model");
  std::cout << desc << '\n';
  const fs::path model_path = fs::path(args.out) / args.model_name;
  std::ofstream log(fs::path(args.out) / "train.log");
  log << desc << '\n';
  ReportPtr report =
      run_training(config.get(), model.get(), images, validation ? &*validation : nullptr, model_path, &log);
  check(quip_model_save(model.get(), model_path.c_str()), "save");
  check(quip_report_write(report.get(), (fs::path(args.out) / "results.tsv").c_str()), "report");
  std::cout << "model written to " << model_path.string() << " (best epoch " << quip_report_best_epoch(report.get())
            << ")\n";
  return 0;
}

// ---- restore / dequip

struct RestoreArgs {
  std::string model, input, out, reference;
  bool synthesize = false;
  int bit_depth = 8;
};

struct Scored {
  std::string name;
  double input_psnr = NAN, input_ssim = NAN, psnr = NAN, ssim = NAN;
};

void write_scores(const std::vector<Scored>& rows, const fs::path& path, bool scored) {
  std::ofstream f(path);
  if (!f) throw Exit{kExitFailure, "cannot write " + path.string()};
  f << "image\tinput_psnr\tinput_ssim\tpsnr\tssim\n";
  for (const Scored& r : rows) {
    char line[512];
    if (scored)
      std::snprintf(line, sizeof line, "%s\t%.6f\t%.9f\t%.6f\t%.9f\n", r.name.c_str(), r.input_psnr, r.input_ssim,
                    r.psnr, r.ssim);
    else
      std::snprintf(line, sizeof line, "%s\tnan\tnan\tnan\tnan\n", r.name.c_str());
    f << line;
  }
}

void print_scores(const std::vector<Scored>& rows) {
  double ip = 0, is = 0, p = 0, s = 0;
  for (const Scored& r : rows) {
    std::cout << r.name << "  input " << score_text(r.input_psnr, r.input_ssim) << "  restored "
              << score_text(r.psnr, r.ssim) << '\n';
    ip += r.input_psnr, is += r.input_ssim, p += r.psnr, s += r.ssim;
  }
  const double n = static_cast<double>(rows.size());
  std::cout << "mean  input " << score_text(ip / n, is / n) << "  restored " << score_text(p / n, s / n) << '\n';
}

// Shared driver: `restore_one` maps a network input to its restoration.
template <typename F>
int restore_images(const RestoreArgs& args, const Common& common, quip_config* config, F restore_one) {
  const auto inputs = image_inputs(args.input, "input");
  std::optional<std::vector<fs::path>> references;
  if (!args.reference.empty()) {
    references.emplace();
    require_directory(args.reference, "reference");
    for (const auto& in : inputs) {
      const fs::path stem = in.stem();
      std::optional<fs::path> match;
      for (const auto& candidate : image_inputs(args.reference, "reference directory"))
        if (candidate.stem() == stem) match = candidate;
      if (!match) throw Exit{kExitUsage, "no reference image for " + in.filename().string()};
      references->push_back(*match);
    }
  }
  if (args.bit_depth != 8 && args.bit_depth != 16) throw Exit{kExitUsage, "--bit-depth must be 8 or 16"};
  make_output_dir(args.out);
  const bool scored = args.synthesize || references.has_value();
  const std::size_t border = std::stoul(config_value(config, "eval.crop_border"));
  std::vector<Scored> rows(inputs.size());
  parallel_for(inputs.size(), common.jobs, [&](std::size_t i) {
    ImagePtr source = load_image(inputs[i]);
    ImagePtr clean, input;
    if (args.synthesize) {
      quip_image* in = nullptr;
      check(quip_degrade(config, source.get(), i, &in, nullptr), inputs[i].string());
      clean = std::move(source);
      input.reset(in);
    } else {
      input = std::move(source);
      if (references) clean = load_image((*references)[i]);
    }
    ImagePtr out = restore_one(input.get(), inputs[i]);
    const fs::path target = fs::path(args.out) / (inputs[i].stem().string() + ".restored.png");
    check(quip_image_save(out.get(), target.c_str(), args.bit_depth), target.string());
    Scored& row = rows[i];
    row.name = inputs[i].filename().string();
    if (clean) {
      check(quip_psnr(clean.get(), input.get(), border, &row.input_psnr), row.name);
      check(quip_ssim(clean.get(), input.get(), border, &row.input_ssim), row.name);
      check(quip_psnr(clean.get(), out.get(), border, &row.psnr), row.name);
      check(quip_ssim(clean.get(), out.get(), border, &row.ssim), row.name);
    }
  });
  write_scores(rows, fs::path(args.out) / "results.tsv", scored);
  if (scored) print_scores(rows);
  else
    for (const auto& r : rows) std::cout << r.name << " -> " << fs::path(r.name).stem().string() << ".restored.png\n";
  return 0;
}

int cmd_restore(const RestoreArgs& args, const Common& common) {
  ConfigPtr config = build_config(common);
  std::error_code ec;
  if (!fs::exists(args.model, ec)) throw Exit{kExitUsage, "model file not found: " + args.model};
  quip_model* raw = nullptr;
  check(quip_model_load(args.model.c_str(), &raw), args.model);
  ModelPtr model(raw);
  if (args.synthesize && config_value(config.get(), "degradation.kind") != "awgn" && !quip_model_restores(model.get()))
    throw Exit{kExitUsage, "model " + args.model + " is a denoiser; degradation '" +
                               config_value(config.get(), "degradation.kind") + "' needs a restoration model"};
  return restore_images(args, common, config.get(), [&](const quip_image* in, const fs::path& name) {
    quip_image* out = nullptr;
    check(quip_model_restore(model.get(), in, &out), name.string());
    return ImagePtr(out);
  });
}

int cmd_dequip(const RestoreArgs& args, const Common& common) {
  ConfigPtr config = build_config(common);
  return restore_images(args, common, config.get(), [&](const quip_image* in, const fs::path& name) {
    quip_image* out = nullptr;
    check(quip_dequip(config.get(), in, &out), name.string());
    return ImagePtr(out);
  });
}

// ---- eval

struct EvalArgs {
  std::string reference, test, out;
  std::size_t crop_border = 0;
  bool crop_set = false;
};

int cmd_eval(const EvalArgs& args, const Common& common) {
  require_directory(args.reference, "reference");
  require_directory(args.test, "test");
  ConfigPtr config = build_config(common);
  const auto refs = image_inputs(args.reference, "reference directory");
  const auto tests = image_inputs(args.test, "test directory");
  const std::size_t border =
      args.crop_set ? args.crop_border : std::stoul(config_value(config.get(), "eval.crop_border"));
  std::vector<std::pair<fs::path, fs::path>> pairs;
  for (const auto& r : refs) {
    for (const auto& t : tests) {
      std::string stem = t.stem().string();
      const std::string suffix = ".restored";
      if (stem.size() > suffix.size() && stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0)
        stem.resize(stem.size() - suffix.size());
      if (stem == r.stem().string()) pairs.emplace_back(r, t);
    }
  }
  if (pairs.empty()) throw Exit{kExitUsage, "no test image matches a reference image by name"};
  std::vector<std::pair<double, double>> scores(pairs.size());
  parallel_for(pairs.size(), common.jobs, [&](std::size_t i) {
    ImagePtr ref = load_image(pairs[i].first);
    ImagePtr test = load_image(pairs[i].second);
    check(quip_psnr(ref.get(), test.get(), border, &scores[i].first), pairs[i].second.string());
    check(quip_ssim(ref.get(), test.get(), border, &scores[i].second), pairs[i].second.string());
  });
  double p = 0, s = 0;
  std::ofstream tsv;
  if (!args.out.empty()) {
    make_output_dir(args.out);
    tsv.open(fs::path(args.out) / "results.tsv");
    tsv << "image\tpsnr\tssim\n";
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::cout << pairs[i].second.filename().string() << "  " << score_text(scores[i].first, scores[i].second) << '\n';
    if (tsv.is_open()) {
      char line[512];
      std::snprintf(line, sizeof line, "%s\t%.6f\t%.9f\n", pairs[i].second.filename().c_str(), scores[i].first,
                    scores[i].second);
      tsv << line;
    }
    p += scores[i].first;
    s += scores[i].second;
  }
  const double n = static_cast<double>(pairs.size());
  std::cout << "mean  " << score_text(p / n, s / n) << '\n';
  return 0;
}

// ---- ablate

struct AblateArgs {
  std::string data, validation, out;
};

int cmd_ablate(const AblateArgs& args, const Common& common) {
  require_directory(args.data, "training");
  if (!args.validation.empty()) require_directory(args.validation, "validation");
  const auto images = load_all(image_inputs(args.data, "training directory"));
  std::optional<std::vector<ImagePtr>> validation;
  if (!args.validation.empty()) validation = load_all(image_inputs(args.validation, "validation directory"));
  make_output_dir(args.out);
  struct Variant {
    const char* name;
    const char* interaction;
    const char* projection;
  };
  const Variant variants[] = {{"full", "true", "hamiltonian"},
                              {"no-interaction", "false", "hamiltonian"},
                              {"plain", "true", "plain"}};
  std::ofstream summary(fs::path(args.out) / "results.tsv");
  summary << "variant\tparameters\tbest_epoch\tval_psnr\tval_ssim\tfinal_loss\tlast10_loss_variance\n";
  for (const Variant& v : variants) {
    Common c = common;
    c.overrides.push_back(std::string("--model.interaction=") + v.interaction);
    c.overrides.push_back(std::string("--model.projection=") + v.projection);
    ConfigPtr config = build_config(c);
    quip_model* raw = nullptr;
    check(quip_model_create(config.get(), &raw), v.name);
    ModelPtr model(raw);
    const fs::path dir = fs::path(args.out) / v.name;
    make_output_dir(dir);
    std::cout << "== " << v.name << '\n';
    std::ofstream log(dir / "train.log");
    ReportPtr report = run_training(config.get(), model.get(), images, validation ? &*validation : nullptr,
                                    dir / "model.diva", &log);
    check(quip_report_write(report.get(), (dir / "results.tsv").c_str()), "report");
    const std::size_t epochs = quip_report_epoch_count(report.get());
    std::vector<double> losses(epochs);
    quip_epoch best{};
    for (std::size_t e = 0; e < epochs; ++e) {
      quip_epoch r{};
      check(quip_report_epoch(report.get(), e, &r), "report");
      losses[e] = r.train_loss;
      if (r.epoch == quip_report_best_epoch(report.get())) best = r;
    }
    const std::size_t tail = std::min<std::size_t>(10, epochs);
    double mean = 0, var = 0;
    for (std::size_t e = epochs - tail; e < epochs; ++e) mean += losses[e] / tail;
    for (std::size_t e = epochs - tail; e < epochs; ++e) var += (losses[e] - mean) * (losses[e] - mean) / tail;
    char line[512];
    std::snprintf(line, sizeof line, "%s\t%zu\t%zu\t%.6f\t%.9f\t%.12e\t%.12e\n", v.name,
                  quip_model_parameter_count(model.get()), best.epoch, best.val_psnr, best.val_ssim,
                  losses.back(), var);
    summary << line;
    std::cout << v.name << ": " << score_text(best.val_psnr, best.val_ssim) << "  last-" << tail
              << " loss variance " << var << '\n';
  }
  return 0;
}

// ---- gradcheck

int cmd_gradcheck(std::uint64_t seed) {
  bool ok = true;
  for (int neutral = 0; neutral < 2; ++neutral) {
    quip_gradcheck_group groups[32];
    std::size_t count = 0;
    check(quip_gradcheck(seed, neutral, groups, 32, &count), "gradcheck");
    std::cout << (neutral ? "with neutralization" : "without neutralization") << '\n';
    for (std::size_t i = 0; i < count && i < 32; ++i) {
      const bool pass = groups[i].max_relative_error < 1e-4;
      ok = ok && pass;
      std::printf("  %-30s %5zu coords  max rel err %.3e  %s\n", groups[i].name, groups[i].coordinates,
                  groups[i].max_relative_error, pass ? "ok" : "FAIL");
    }
  }
  std::cout << (ok ? "gradient check passed" : "gradient check FAILED") << '\n';
  return ok ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates and frees many large tensors per step; keeping them
  // on the heap avoids a page-fault storm from mmap/munmap.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  CLI::App app{"quip: quantum-interactive-patches image restoration"};
  app.require_subcommand(1);
  app.set_version_flag("--version", quip_version());

  Common common;
  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a DIVA / DIVA-A model");
  train->add_option("-d,--data", train_args.data, "Training image directory")->required();
  train->add_option("--validation", train_args.validation, "Validation directory (default: split from --data)");
  train->add_option("-o,--out", train_args.out, "Output directory")->required();
  add_common(train, common);

  RestoreArgs restore_args;
  auto* restore = app.add_subcommand("restore", "Restore images with a trained model");
  restore->add_option("-m,--model", restore_args.model, "Model file")->required();
  restore->add_option("-i,--input", restore_args.input, "Input image or directory")->required();
  restore->add_option("-o,--out", restore_args.out, "Output directory")->required();
  restore->add_option("--reference", restore_args.reference, "Clean references (matched by file stem)");
  restore->add_flag("--synthesize", restore_args.synthesize,
                    "Treat inputs as clean and degrade them per [degradation] first");
  restore->add_option("--bit-depth", restore_args.bit_depth, "Output PNG bit depth (8 or 16)");
  add_common(restore, common);

  RestoreArgs dequip_args;
  auto* dequip = app.add_subcommand("dequip", "Classical quantum-interactive-patches denoiser");
  dequip->add_option("-i,--input", dequip_args.input, "Input image or directory")->required();
  dequip->add_option("-o,--out", dequip_args.out, "Output directory")->required();
  dequip->add_option("--reference", dequip_args.reference, "Clean references (matched by file stem)");
  dequip->add_flag("--synthesize", dequip_args.synthesize, "Treat inputs as clean and degrade them first");
  dequip->add_option("--bit-depth", dequip_args.bit_depth, "Output PNG bit depth (8 or 16)");
  add_common(dequip, common);

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Score test images against references (PSNR/SSIM)");
  eval->add_option("-r,--reference", eval_args.reference, "Reference directory")->required();
  eval->add_option("-t,--test", eval_args.test, "Test directory")->required();
  eval->add_option("-o,--out", eval_args.out, "Directory for results.tsv");
  eval->add_option("--crop-border", eval_args.crop_border, "Pixels dropped on each side before scoring");
  add_common(eval, common);

  AblateArgs ablate_args;
  auto* ablate = app.add_subcommand("ablate", "Train full, no-interaction and plain-projection variants");
  ablate->add_option("-d,--data", ablate_args.data, "Training image directory")->required();
  ablate->add_option("--validation", ablate_args.validation, "Validation directory (default: split from --data)");
  ablate->add_option("-o,--out", ablate_args.out, "Output directory")->required();
  add_common(ablate, common);

  std::uint64_t grad_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
  gradcheck->add_option("--seed", grad_seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    CLI::App* used = app.get_subcommands().front();
    common.overrides = used->remaining();
    if (used == train) return cmd_train(train_args, common);
    if (used == restore) return cmd_restore(restore_args, common);
    if (used == dequip) return cmd_dequip(dequip_args, common);
    if (used == eval) {
      eval_args.crop_set = eval->count("--crop-border") > 0;
      return cmd_eval(eval_args, common);
    }
    if (used == ablate) return cmd_ablate(ablate_args, common);
    if (used == gradcheck) return cmd_gradcheck(grad_seed);
  } catch (const Exit& e) {
    std::cerr << "quip: " << e.message << '\n';
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "quip: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
