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


#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "quip/error.hpp"
#include "quip/train.hpp"
#include "support.hpp"

namespace {

using namespace quip;
using namespace quip::train;

diva::ModelConfig tiny_model() {
  diva::ModelConfig c;
  c.geometry = {3, 7, 2, 2, 5};
  c.depth = 1;
  c.features = 2;
  return c;
}

TrainConfig tiny_train() {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 4;
  c.sigma = SigmaRange::fixed(20);
  c.crop_size = 12;
  c.crops_per_image = 3;
  c.seed = 7;
  return c;
}

/// Independent rotation oracle: counter-clockwise quarter turn.
Image rot90(const Image& x) {
  Image out(x.width, x.height);
  for (std::size_t r = 0; r < out.height; ++r)
    for (std::size_t c = 0; c < out.width; ++c) out.at(r, c) = x.at(c, x.width - 1 - r);
  return out;
}

Image hflip(const Image& x) {
  Image out(x.height, x.width);
  for (std::size_t r = 0; r < x.height; ++r)
    for (std::size_t c = 0; c < x.width; ++c) out.at(r, c) = x.at(r, x.width - 1 - c);
  return out;
}

Image vflip(const Image& x) {
  Image out(x.height, x.width);
  for (std::size_t r = 0; r < x.height; ++r)
    for (std::size_t c = 0; c < x.width; ++c) out.at(r, c) = x.at(x.height - 1 - r, c);
  return out;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("learning-rate endpoints are exact") {
    TrainConfig c;
    CHECK(lr_at(0, c) == 1e-3);
    CHECK(lr_at(59, c) == 1e-6);
    CHECK_THROWS_AS(lr_at(60, c), ArgumentError);
    c.epochs = 1;
    CHECK(lr_at(0, c) == 1e-3);
  }

  TEST_CASE("learning rate at epoch 30 of 60") {
    TrainConfig c;
    const double expected = 1e-3 * std::pow(1e-3, 30.0 / 59.0);
    CHECK(lr_at(30, c) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(lr_at(30, c) == doctest::Approx(3.09e-5).epsilon(0.04));
  }

  TEST_CASE("learning rate strictly decreases") {
    TrainConfig c;
    for (std::size_t e = 1; e < c.epochs; ++e) CHECK(lr_at(e, c) < lr_at(e - 1, c));
  }

  TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.lr_end = c.lr_start;
    CHECK_THROWS_AS(c.validate(), ArgumentError);
    c = {};
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), ArgumentError);
    c = {};
    c.lr_end = 0.0;
    CHECK_THROWS_AS(c.validate(), ArgumentError);
    c = {};
    c.sigma = {30, 10};
    CHECK_THROWS_AS(c.validate(), ArgumentError);
    c = {};
    c.epochs = 1;
    c.lr_start = 0.0;
    CHECK_NOTHROW(c.validate());
  }

  TEST_CASE("default crop covers window plus patch in multiples of 12") {
    CHECK(TrainConfig::default_crop(patch::PatchGeometry::with_defaults(7, 15)) == 24);
    CHECK(TrainConfig::default_crop(patch::PatchGeometry::with_defaults(15, 35)) == 60);
    TrainConfig c;
    c.crop_size = 10;
    CHECK_THROWS_AS(c.crop_for(patch::PatchGeometry::with_defaults(7, 15)), ArgumentError);
    c.crop_size = 25;
    c.degradation.kind = degrade::Kind::bicubic_down;
    c.degradation.scale = 2;
    CHECK_THROWS_AS(c.crop_for(patch::PatchGeometry::with_defaults(7, 15)), ArgumentError);
  }

  TEST_CASE("augmentations match the rotation and flip oracles") {
    std::mt19937_64 rng(1);
    const Image x = testing::random_image(4, 6, rng);
    CHECK(augment(x, 0) == x);
    CHECK(augment(x, 1) == hflip(x));
    CHECK(augment(x, 2) == vflip(x));
    CHECK(augment(x, 3) == rot90(x));
    CHECK(augment(x, 4) == hflip(rot90(x)));
    CHECK(augment(x, 5) == vflip(rot90(x)));
    std::set<std::vector<double>> distinct;
    const Image sq = testing::random_image(5, 5, rng);
    for (std::size_t t = 0; t < kTransformCount; ++t) distinct.insert(augment(sq, t).pixels);
    CHECK(distinct.size() == 6);
    CHECK_THROWS_AS(augment(x, 6), ArgumentError);
  }

  TEST_CASE("fully symmetric images are fixed by every augmentation") {
    Image x(5, 5);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 5; ++c) x.at(r, c) = 0.1 * (std::abs(int(r) - 2) + std::abs(int(c) - 2));
    for (std::size_t t = 0; t < kTransformCount; ++t) CHECK(augment(x, t) == x);
    Image mirror(3, 4, std::vector<double>{0.1, 0.2, 0.2, 0.1, 0.3, 0.4, 0.4, 0.3, 0.5, 0.6, 0.6, 0.5});
    CHECK(augment(mirror, 1) == mirror);
  }

  TEST_CASE("pairs carry the residual target") {
    std::mt19937_64 rng(2);
    const Image clean = testing::random_image(12, 12, rng);
    degrade::DegradationSpec spec;
    const SamplePair p = make_pair(clean, spec, 25.0, 3);
    CHECK(p.clean == clean);
    for (std::size_t i = 0; i < clean.size(); ++i) CHECK(p.residual.pixels[i] == p.degraded.pixels[i] - p.clean.pixels[i]);
  }

  TEST_CASE("pair stream is reproducible for a fixed seed") {
    std::mt19937_64 rng(3);
    std::vector<Image> images;
    for (int i = 0; i < 10; ++i) images.push_back(testing::random_image(20 + i, 18, rng));
    TrainConfig c = tiny_train();
    c.crops_per_image = 12;
    const Dataset d = make_dataset(images, c, tiny_model().geometry);
    const auto a = epoch_pairs(d, c, 0), b = epoch_pairs(d, c, 0);
    REQUIRE(a.size() == 120);
    for (std::size_t i = 0; i < 100; ++i) {
      CHECK(a[i].clean == b[i].clean);
      CHECK(a[i].degraded == b[i].degraded);
      CHECK(a[i].residual == b[i].residual);
    }
    const auto other = epoch_pairs(d, c, 1);
    CHECK_FALSE(other[0].degraded == a[0].degraded);
    c.seed = 8;
    CHECK_FALSE(epoch_pairs(d, c, 0)[0].degraded == a[0].degraded);
  }

  TEST_CASE("degenerate blind range behaves as the fixed sigma") {
    std::mt19937_64 rng(4);
    const std::vector<Image> images{testing::random_image(30, 30, rng), testing::random_image(25, 40, rng)};
    TrainConfig fixed = tiny_train(), blind = tiny_train();
    fixed.sigma = SigmaRange::fixed(15);
    blind.sigma = {15, 15};
    const Dataset d = make_dataset(images, fixed, tiny_model().geometry);
    const auto a = epoch_pairs(d, fixed, 0), b = epoch_pairs(d, blind, 0);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].degraded == b[i].degraded);
  }

  TEST_CASE("blind mode draws sigma inside the range") {
    std::mt19937_64 rng(5);
    const std::vector<Image> images{testing::random_image(30, 30, rng)};
    TrainConfig c = tiny_train();
    c.sigma = {5, 40};
    c.crops_per_image = 50;
    const auto pairs = epoch_pairs(make_dataset(images, c, tiny_model().geometry), c, 0);
    std::set<double> sigmas;
    for (const auto& p : pairs) {
      CHECK((p.sigma >= 5 && p.sigma <= 40));
      sigmas.insert(p.sigma);
    }
    CHECK(sigmas.size() == 50);
  }

  TEST_CASE("small images are skipped with a warning") {
    TrainConfig c = tiny_train();
    const Dataset d = make_dataset({Image(8, 30), Image(12, 12), Image(30, 11)}, c, tiny_model().geometry);
    CHECK(d.images.size() == 1);
    CHECK(d.warnings.size() == 2);
    CHECK_THROWS_AS(make_dataset({Image(8, 8)}, c, tiny_model().geometry), ArgumentError);
    CHECK_THROWS_AS(make_dataset({}, c, tiny_model().geometry), ArgumentError);
  }

  TEST_CASE("validation split is seeded and keeps both sides nonempty") {
    std::vector<Image> images;
    for (int i = 0; i < 20; ++i) images.push_back(Image(2, 2, i / 20.0));
    const Split a = split_validation(images, 0.1, 1), b = split_validation(images, 0.1, 1);
    CHECK(a.validation.size() == 2);
    CHECK(a.train.size() == 18);
    CHECK(a.validation == b.validation);
    CHECK(split_validation({Image(2, 2), Image(2, 2)}, 0.1, 1).validation.size() == 1);
    CHECK(split_validation(images, 0.0, 1).validation.empty());
    CHECK(split_validation({Image(2, 2)}, 0.5, 1).validation.empty());
  }

  TEST_CASE("zero learning rate leaves the parameters") {
    std::mt19937_64 rng(6);
    diva::DivaModel model = diva::DivaModel::initialized(tiny_model(), 1);
    const diva::DivaModel before = model;
    TrainConfig c = tiny_train();
    c.epochs = 1;
    c.lr_start = 0.0;
    c.crops_per_image = 1;
    c.batch_size = 1;
    const TrainReport r = train::train(model, {testing::random_image(12, 12, rng)}, {}, c);
    CHECK(r.batch_losses.size() == 1);
    const diva::DivaModel& m = model;
    const auto a = m.parameters(), b = before.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
  }

  TEST_CASE("training reduces the loss and restores the best weights") {
    std::mt19937_64 rng(7);
    std::vector<Image> images;
    for (int i = 0; i < 3; ++i) images.push_back(testing::texture(24, 24));
    const std::vector<Image> validation{testing::texture(20, 20)};
    diva::DivaModel model = diva::DivaModel::initialized(tiny_model(), 2);
    TrainConfig c = tiny_train();
    c.epochs = 6;
    c.crops_per_image = 8;
    std::vector<std::size_t> seen;
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochRecord& r) { seen.push_back(r.epoch); };
    std::ostringstream log;
    hooks.log = &log;
    const TrainReport r = train::train(model, images, validation, c, hooks);
    REQUIRE(r.epochs.size() == 6);
    CHECK(seen == std::vector<std::size_t>{1, 2, 3, 4, 5, 6});
    CHECK(r.batch_losses.size() == 6 * 6);
    CHECK(r.epochs.back().train_loss < r.epochs.front().train_loss);
    double best = -1e9;
    for (const auto& e : r.epochs) best = std::max(best, e.val_psnr);
    CHECK(r.best_psnr == best);
    CHECK(evaluate(model, validation_pairs(validation, c)).psnr == doctest::Approx(best).epsilon(1e-12));
    CHECK(log.str().find("epoch   1") != std::string::npos);
  }

  TEST_CASE("training is deterministic") {
    auto run = [] {
      std::vector<Image> images{testing::texture(24, 24), testing::texture(30, 26)};
      diva::DivaModel model = diva::DivaModel::initialized(tiny_model(), 3);
      TrainConfig c = tiny_train();
      return train::train(model, images, {}, c).batch_losses;
    };
    CHECK(run() == run());
  }

  TEST_CASE("checkpoint is written on improvement") {
    testing::TempDir dir("ckpt");
    diva::DivaModel model = diva::DivaModel::initialized(tiny_model(), 4);
    TrainConfig c = tiny_train();
    c.epochs = 2;
    c.checkpoint = dir.path() / "best.diva";
    (void)train::train(model, {testing::texture(24, 24)}, {testing::texture(16, 16)}, c);
    REQUIRE(std::filesystem::exists(*c.checkpoint));
    const diva::DivaModel back = diva::load_model(*c.checkpoint);
    const diva::DivaModel& m = model;
    const auto a = m.parameters(), b = back.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
  }

  TEST_CASE("results file has one record per epoch") {
    TrainReport r;
    r.epochs.push_back({1, 1e-3, 0.5, 25.0, 0.75, 1.25});
    r.epochs.push_back({2, 1e-6, 0.25, std::nan(""), std::nan(""), 0.5});
    std::ostringstream out;
    write_results(r, out);
    std::istringstream in(out.str());
    std::string header, first, second;
    std::getline(in, header);
    std::getline(in, first);
    std::getline(in, second);
    CHECK(header == "epoch\tlr\ttrain_loss\tval_psnr\tval_ssim\tseconds");
    CHECK(first.rfind("1\t", 0) == 0);
    CHECK(second.find("nan") != std::string::npos);
  }
}
