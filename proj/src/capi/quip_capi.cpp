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


#include "quip/quip.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <limits>
#include <new>
#include <string>

#include "quip/config.hpp"
#include "quip/dequip.hpp"
#include "quip/diva.hpp"
#include "quip/error.hpp"
#include "quip/gradcheck.hpp"
#include "quip/imageio.hpp"
#include "quip/metrics.hpp"
#include "quip/train.hpp"

struct quip_config {
  quip::config::RunConfig config;
};

struct quip_image {
  quip::Image image;
};

struct quip_model {
  quip::diva::DivaModel model;
};

struct quip_report {
  quip::train::TrainReport report;
};

namespace {

thread_local std::string last_error;

quip_status fail(quip_status status, const std::string& message) {
  last_error = message;
  return status;
}

// Runs `body`, mapping exceptions to status codes.
template <typename F>
quip_status guard(F&& body) {
  try {
    body();
    return QUIP_OK;
  } catch (const quip::ArgumentError& e) {
    return fail(QUIP_ERROR_ARGUMENT, e.what());
  } catch (const quip::ShapeError& e) {
    return fail(QUIP_ERROR_SHAPE, e.what());
  } catch (const quip::NumericError& e) {
    return fail(QUIP_ERROR_NUMERIC, e.what());
  } catch (const quip::IoError& e) {
    return fail(QUIP_ERROR_IO, e.what());
  } catch (const quip::FormatError& e) {
    return fail(QUIP_ERROR_FORMAT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(QUIP_ERROR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(QUIP_ERROR_INTERNAL, e.what());
  }
}

void require(const void* p, const char* what) {
  if (!p) throw quip::ArgumentError(std::string(what) + " is NULL");
}

void copy_text(const std::string& text, char* buffer, std::size_t size) {
  require(buffer, "buffer");
  if (size == 0) throw quip::ArgumentError("buffer size is 0");
  const std::size_t n = std::min(text.size(), size - 1);
  std::memcpy(buffer, text.data(), n);
  buffer[n] = '\0';
}

quip::Image bordered(const quip_image* image, std::size_t border) {
  return quip::metrics::crop_border(image->image, border);
}

}  // namespace

extern "C" {

const char* quip_last_error(void) { return last_error.c_str(); }

const char* quip_version(void) { return "1.0.0"; }

const char* quip_status_name(quip_status status) {
  switch (status) {
    case QUIP_OK: return "ok";
    case QUIP_ERROR_ARGUMENT: return "invalid argument";
    case QUIP_ERROR_SHAPE: return "shape mismatch";
    case QUIP_ERROR_NUMERIC: return "numerical failure";
    case QUIP_ERROR_IO: return "i/o error";
    case QUIP_ERROR_FORMAT: return "format error";
    case QUIP_ERROR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

// ---- configuration

quip_status quip_config_create(quip_config** out) {
  return guard([&] {
    require(out, "out");
    *out = new quip_config();
  });
}

void quip_config_free(quip_config* config) { delete config; }

quip_status quip_config_set(quip_config* config, const char* key, const char* value) {
  return guard([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    config->config.set(key, value);
  });
}

quip_status quip_config_load(quip_config* config, const char* path) {
  return guard([&] {
    require(config, "config");
    require(path, "path");
    config->config.set_all(quip::config::parse_file(path));
  });
}

quip_status quip_config_get(const quip_config* config, const char* key, char* buffer, size_t size) {
  return guard([&] {
    require(config, "config");
    require(key, "key");
    copy_text(config->config.get(key), buffer, size);
  });
}

quip_status quip_config_validate(const quip_config* config) {
  return guard([&] {
    require(config, "config");
    config->config.validate();
  });
}

size_t quip_config_warning_count(const quip_config* config) {
  return config ? config->config.warnings().size() : 0;
}

quip_status quip_config_warning(const quip_config* config, size_t index, char* buffer, size_t size) {
  return guard([&] {
    require(config, "config");
    const auto warnings = config->config.warnings();
    if (index >= warnings.size()) throw quip::ArgumentError("warning index out of range");
    copy_text(warnings[index], buffer, size);
  });
}

size_t quip_config_key_count(void) { return quip::config::keys().size(); }

const char* quip_config_key(size_t index) {
  const auto& keys = quip::config::keys();
  return index < keys.size() ? keys[index].key.data() : nullptr;
}

const char* quip_config_key_help(size_t index) {
  const auto& keys = quip::config::keys();
  return index < keys.size() ? keys[index].help.data() : nullptr;
}

// ---- images

quip_status quip_image_create(size_t height, size_t width, const double* pixels, quip_image** out) {
  return guard([&] {
    require(out, "out");
    if (height == 0 || width == 0) throw quip::ArgumentError("image sides must be positive");
    auto* img = new quip_image{quip::Image(height, width)};
    if (pixels) std::copy(pixels, pixels + height * width, img->image.pixels.begin());
    *out = img;
  });
}

quip_status quip_image_load(const char* path, quip_image** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new quip_image{quip::io::read_image(path)};
  });
}

quip_status quip_image_save(const quip_image* image, const char* path, int bit_depth) {
  return guard([&] {
    require(image, "image");
    require(path, "path");
    if (bit_depth != 8 && bit_depth != 16) throw quip::ArgumentError("bit depth must be 8 or 16");
    quip::io::write_image(image->image, path,
                          bit_depth == 16 ? quip::io::BitDepth::sixteen : quip::io::BitDepth::eight);
  });
}

void quip_image_free(quip_image* image) { delete image; }
size_t quip_image_height(const quip_image* image) { return image ? image->image.height : 0; }
size_t quip_image_width(const quip_image* image) { return image ? image->image.width : 0; }
const double* quip_image_pixels(const quip_image* image) { return image ? image->image.pixels.data() : nullptr; }

// ---- metrics

quip_status quip_psnr(const quip_image* reference, const quip_image* test, size_t border, double* out) {
  return guard([&] {
    require(reference, "reference");
    require(test, "test");
    require(out, "out");
    *out = quip::metrics::psnr(bordered(reference, border), bordered(test, border));
  });
}

quip_status quip_ssim(const quip_image* reference, const quip_image* test, size_t border, double* out) {
  return guard([&] {
    require(reference, "reference");
    require(test, "test");
    require(out, "out");
    *out = quip::metrics::ssim(bordered(reference, border), bordered(test, border));
  });
}

quip_status quip_format_score(double psnr, double ssim, char* buffer, size_t size) {
  return guard([&] { copy_text(quip::metrics::format_score({psnr, ssim}), buffer, size); });
}

// ---- degradation and baseline

quip_status quip_degrade(const quip_config* config, const quip_image* clean, uint64_t seed,
                         quip_image** network_input, quip_image** observed) {
  return guard([&] {
    require(config, "config");
    require(clean, "clean");
    require(network_input, "network_input");
    quip::degrade::DegradationSpec spec = config->config.degradation();
    spec.seed = seed;
    quip::Image input = quip::degrade::restoration_input(spec, clean->image);
    quip::Image raw;
    if (observed) raw = quip::degrade::apply(spec, clean->image).observed;
    *network_input = new quip_image{std::move(input)};
    if (observed) *observed = new quip_image{std::move(raw)};
  });
}

quip_status quip_dequip(const quip_config* config, const quip_image* input, quip_image** out) {
  return guard([&] {
    require(config, "config");
    require(input, "input");
    require(out, "out");
    *out = new quip_image{
        quip::dequip::dequip_denoise(input->image, config->config.geometry(), config->config.dequip())};
  });
}

// ---- models

quip_status quip_model_create(const quip_config* config, quip_model** out) {
  return guard([&] {
    require(config, "config");
    require(out, "out");
    *out = new quip_model{
        quip::diva::DivaModel::initialized(config->config.model(), config->config.model_seed())};
  });
}

quip_status quip_model_create_zero(const quip_config* config, quip_model** out) {
  return guard([&] {
    require(config, "config");
    require(out, "out");
    *out = new quip_model{quip::diva::DivaModel(config->config.model())};
  });
}

quip_status quip_model_load(const char* path, quip_model** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new quip_model{quip::diva::load_model(std::filesystem::path(path))};
  });
}

quip_status quip_model_save(const quip_model* model, const char* path) {
  return guard([&] {
    require(model, "model");
    require(path, "path");
    quip::diva::save_model(model->model, std::filesystem::path(path));
  });
}

void quip_model_free(quip_model* model) { delete model; }

int quip_model_restores(const quip_model* model) { return model && model->model.restores() ? 1 : 0; }

size_t quip_model_parameter_count(const quip_model* model) {
  return model ? model->model.trainable_count() : 0;
}

quip_status quip_model_describe(const quip_model* model, char* buffer, size_t size) {
  return guard([&] {
    require(model, "model");
    const auto& c = model->model.config();
    char text[512];
    std::snprintf(text, sizeof text,
                  "%s model: n=%zu W=%zu stride=%zu neighbor-stride=%zu kappa=%zu depth=%zu%s%s, interaction %s, "
                  "%s projection, %zu trainable parameters",
                  c.mode == quip::diva::Mode::restore ? "restoration" : "denoising", c.geometry.patch_size,
                  c.geometry.window, c.geometry.stride, c.geometry.neighbor_stride, model->model.group_size(),
                  c.depth, c.mode == quip::diva::Mode::restore ? " F=" : "",
                  c.mode == quip::diva::Mode::restore ? std::to_string(c.features).c_str() : "",
                  c.interaction ? "on" : "off",
                  c.projection == quip::diva::ProjectionKind::plain ? "plain" : "hamiltonian",
                  model->model.trainable_count());
    copy_text(text, buffer, size);
  });
}

quip_status quip_model_restore(const quip_model* model, const quip_image* input, quip_image** restored) {
  return guard([&] {
    require(model, "model");
    require(input, "input");
    require(restored, "restored");
    *restored = new quip_image{quip::diva::model_forward(model->model, input->image).restored};
  });
}

// ---- training

quip_status quip_train(const quip_config* config, quip_model* model, const quip_image* const* images, size_t count,
                       const quip_image* const* validation, size_t validation_count, const char* checkpoint,
                       quip_log_fn log, void* user, quip_report** out) {
  return guard([&] {
    require(config, "config");
    require(model, "model");
    require(out, "out");
    if (count == 0) throw quip::ArgumentError("no training images");
    require(images, "images");
    quip::train::TrainConfig tc = config->config.training();
    if (checkpoint) tc.checkpoint = std::filesystem::path(checkpoint);
    std::vector<quip::Image> all;
    for (size_t i = 0; i < count; ++i) {
      require(images[i], "training image");
      all.push_back(images[i]->image);
    }
    quip::train::Split split;
    if (validation) {
      split.train = std::move(all);
      for (size_t i = 0; i < validation_count; ++i) {
        require(validation[i], "validation image");
        split.validation.push_back(validation[i]->image);
      }
    } else {
      split = quip::train::split_validation(std::move(all), tc.validation_fraction, tc.seed);
    }
    struct LogBuf : std::stringbuf {
      quip_log_fn fn;
      void* user;
      int sync() override {
        std::string s = str();
        std::size_t start = 0;
        for (std::size_t nl; (nl = s.find('\n', start)) != std::string::npos; start = nl + 1)
          fn(s.substr(start, nl - start).c_str(), user);
        str(s.substr(start));
        return 0;
      }
    };
    LogBuf buf;
    buf.fn = log;
    buf.user = user;
    std::ostream stream(&buf);
    quip::train::TrainHooks hooks;
    if (log) hooks.log = &stream;
    auto report = quip::train::train(model->model, split.train, split.validation, tc, hooks);
    *out = new quip_report{std::move(report)};
  });
}

void quip_report_free(quip_report* report) { delete report; }

size_t quip_report_epoch_count(const quip_report* report) { return report ? report->report.epochs.size() : 0; }

quip_status quip_report_epoch(const quip_report* report, size_t index, quip_epoch* out) {
  return guard([&] {
    require(report, "report");
    require(out, "out");
    if (index >= report->report.epochs.size()) throw quip::ArgumentError("epoch index out of range");
    const auto& r = report->report.epochs[index];
    *out = quip_epoch{r.epoch, r.lr, r.train_loss, r.val_psnr, r.val_ssim, r.seconds};
  });
}

size_t quip_report_best_epoch(const quip_report* report) { return report ? report->report.best_epoch : 0; }

size_t quip_report_batch_count(const quip_report* report) {
  return report ? report->report.batch_losses.size() : 0;
}

double quip_report_batch_loss(const quip_report* report, size_t index) {
  if (!report || index >= report->report.batch_losses.size()) return std::numeric_limits<double>::quiet_NaN();
  return report->report.batch_losses[index];
}

quip_status quip_report_write(const quip_report* report, const char* path) {
  return guard([&] {
    require(report, "report");
    require(path, "path");
    std::ofstream f(path);
    if (!f) throw quip::IoError(std::string("cannot open ") + path + " for writing");
    quip::train::write_results(report->report, f);
    if (!f) throw quip::IoError(std::string("failed to write ") + path);
  });
}

// ---- verification

quip_status quip_gradcheck(uint64_t seed, int neutralization, quip_gradcheck_group* groups, size_t capacity,
                           size_t* count) {
  return guard([&] {
    require(count, "count");
    if (capacity > 0) require(groups, "groups");
    quip::gradcheck::Options options;
    options.seed = seed;
    options.neutralization = neutralization != 0;
    const auto report = quip::gradcheck::run(options);
    *count = report.groups.size();
    for (size_t i = 0; i < report.groups.size() && i < capacity; ++i) {
      quip_gradcheck_group& g = groups[i];
      std::memset(g.name, 0, sizeof g.name);
      std::strncpy(g.name, report.groups[i].name.c_str(), sizeof g.name - 1);
      g.coordinates = report.groups[i].coordinates;
      g.max_relative_error = report.groups[i].max_relative_error;
    }
  });
}

}  // extern "C"
