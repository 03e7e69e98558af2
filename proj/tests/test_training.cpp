#include <cmath>

#include "ban/error.hpp"
#include "ban/grad_check.hpp"
#include "ban/losses.hpp"
#include "ban/training.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace ban;
using ban::test::random_tensor;

TEST_CASE("cross entropy") {
  const std::vector<Scalar> uniform{0.3, 0.3, 0.3, 0.3};
  CHECK(cross_entropy(uniform, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  const std::vector<Scalar> sure{0, 0, 200, 0};
  CHECK(cross_entropy(sure, 2) < 1e-80);
  const std::vector<Scalar> extreme{1000, -1000};
  CHECK(std::isfinite(cross_entropy(extreme, 1)));

  Tape tape;
  Var s = tape.parameter(Tensor({4}, {0.1, -2, 3, 0.5}));
  tape.backward(ops::cross_entropy(tape, s, 1));
  CHECK(std::abs(tape.grad(s).sum()) < 1e-14);
}

TEST_CASE("smooth l1") {
  CHECK(smooth_l1({1, 2, 3, 4}, {1, 2, 3, 4}) == 0);
  CHECK(smooth_l1({0.5, 0, 0, 0}, {0, 0, 0, 0}) == 0.125);
  CHECK(smooth_l1({0, 2, 0, 0}, {0, 0, 0, 0}) == 1.5);
}

TEST_CASE("grad check: losses") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(600 + seed);
    const int u = static_cast<int>(rng.uniform_int(0, 4));
    auto ce = [&](Tape& t, std::span<const Var> p) { return ops::cross_entropy(t, p[0], u); };
    CHECK(grad_check(ce, {random_tensor({5}, rng, -3, 3)}, 1e-6) < 1e-4);
    const RegressionTarget target{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    auto sl = [&](Tape& t, std::span<const Var> p) { return ops::smooth_l1(t, p[0], target); };
    // Keep every coordinate away from the |d| = 1 kink.
    Tensor v({4});
    const double tv[] = {target.tx, target.ty, target.tw, target.th};
    for (std::size_t i = 0; i < 4; ++i) v[i] = static_cast<Scalar>(tv[i] + (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.1, 0.8) * (i % 2 ? 1 : 3));
    CHECK(grad_check(sl, {v}, 1e-6) < 1e-4);
  }
}

TEST_CASE("label assignment") {
  const std::vector<GroundTruth> gts{{1, Box::from_corners(0, 0, 10, 10)}, {2, Box::from_corners(4, 0, 14, 10)}};
  const std::vector<Box> props{Box::from_corners(0, 0, 10, 10), Box::from_corners(50, 50, 60, 60),
                               Box::from_corners(4, 0, 14, 10)};
  const auto l = assign_labels(props, gts);
  CHECK(l[0].label == 1);
  CHECK(l[0].target == RegressionTarget{0, 0, 0, 0});
  CHECK(l[1].label == 0);
  CHECK(l[2].label == 2);

  // IoU 0.3 against the only gt.
  const Box gt = Box::from_corners(0, 0, 10, 10);
  const Box p = Box::from_corners(0, 0, 10, 3);
  CHECK(iou(p, gt) == doctest::Approx(0.3));
  CHECK(assign_labels(std::span(&p, 1), std::vector<GroundTruth>{{1, gt}})[0].label == 0);

  // 0.6 vs 0.7 overlap: the 0.7 box wins regardless of order.
  const Box q = Box::from_corners(0, 0, 10, 10);
  const std::vector<GroundTruth> two{{1, Box::from_corners(0, 0, 10, 6)}, {3, Box::from_corners(0, 0, 10, 7)}};
  CHECK(iou(q, two[0].box) == doctest::Approx(0.6));
  CHECK(assign_labels(std::span(&q, 1), two)[0].label == 3);
}

TEST_CASE("ohem selection") {
  auto rois = [](std::vector<double> losses) {
    std::vector<LabeledRoI> out(losses.size());
    for (std::size_t i = 0; i < losses.size(); ++i) out[i].loss = losses[i];
    return out;
  };
  CHECK(ohem_select(rois({3, 1, 2}), 2) == std::vector<std::size_t>{0, 2});
  CHECK(ohem_select(rois({3, 1, 2}), 3).size() == 3);
  CHECK(ohem_select(rois({1, 1, 1, 1}), 2) == std::vector<std::size_t>{0, 1});
  CHECK_THROWS(ohem_select(rois({1, 2}), 3));
}

TEST_CASE("sgd arithmetic") {
  SgdConfig cfg;
  cfg.momentum = 0;
  cfg.weight_decay = 0;
  ParamSet p{{"w", Tensor({1}, {1})}};
  SgdState state;
  sgd_step(p, {{"w", Tensor({1}, {0})}}, state, 0.1, cfg);
  CHECK(p.at("w")[0] == 1);
  sgd_step(p, {{"w", Tensor({1}, {1})}}, state, 0.1, cfg);
  CHECK(p.at("w")[0] == doctest::Approx(0.9).epsilon(1e-15));

  cfg.momentum = 0.9;
  ParamSet q{{"w", Tensor({1}, {0})}};
  SgdState s2;
  sgd_step(q, {{"w", Tensor({1}, {1})}}, s2, 0.1, cfg);
  sgd_step(q, {{"w", Tensor({1}, {1})}}, s2, 0.1, cfg);
  CHECK(q.at("w")[0] == doctest::Approx(-(0.1 + 0.19)).epsilon(1e-14));

  ParamSet r{{"w", Tensor({1}, {1})}};
  CHECK_THROWS_AS(sgd_step(r, {{"w", Tensor({1}, {NAN})}}, s2, 0.1, cfg), NumericError);
}

TEST_CASE("learning rate schedule") {
  SgdConfig cfg;
  CHECK(cfg.lr_at(0) == 1e-3);
  CHECK(cfg.lr_at(1399) == 1e-3);
  CHECK(cfg.lr_at(1400) == 1e-4);
}

TEST_CASE("proposals") {
  const std::vector<Box> gts{Box::from_corners(10, 10, 40, 50), Box::from_corners(60, 70, 100, 100)};
  const auto a = propose(gts, 128, 128, 300, 5);
  CHECK(a.size() == 300);
  CHECK(a == propose(gts, 128, 128, 300, 5));
  CHECK_FALSE(a == propose(gts, 128, 128, 300, 6));
  for (const auto& b : a) {
    const Corners c = b.corners();
    CHECK(c.x1 >= 0);
    CHECK(c.y1 >= 0);
    CHECK(c.x2 <= 128);
    CHECK(c.y2 <= 128);
    CHECK(b.valid());
  }
  ProposalConfig still;
  still.center_jitter = 0;
  still.scale_jitter = 0;
  still.jitter_per_gt = 3;
  const auto s = propose(gts, 128, 128, 6, 1, still);
  for (std::size_t i = 0; i < 6; ++i) CHECK(s[i] == gts[i / 3]);
}

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.backbone.channels = {4, 6};
  m.head.contexts = parse_contexts("side_top,in");
  m.head.num_classes = 2;
  m.head.k = 2;
  m.head.trunk_channels = 8;
  return m;
}

Dataset tiny_data() {
  SyntheticSpec spec;
  spec.num_images = 4;
  spec.image_size = 32;
  spec.classes = {"circle", "square"};
  spec.min_size = 8;
  spec.max_size = 16;
  spec.max_objects = 2;
  return generate_samples(spec);
}

SgdConfig tiny_sgd() {
  SgdConfig s;
  s.iterations = 3;
  s.rois_per_image = 20;
  s.ohem_keep = 8;
  s.schedule = {{2, 1e-4}};
  return s;
}

}  // namespace

TEST_CASE("training is deterministic and lr 0 is a no-op") {
  const ModelConfig m = tiny_model();
  const Dataset d = tiny_data();
  const auto a = train(d, m, tiny_sgd(), {}, 3);
  const auto b = train(d, m, tiny_sgd(), {}, 3);
  CHECK(a.params == b.params);
  CHECK(a.log.size() == 3);
  CHECK(a.log[2].lr == 1e-4);
  CHECK_FALSE(a.params == build_model(m, 3));

  SgdConfig zero = tiny_sgd();
  zero.lr = 0;
  zero.schedule.clear();
  CHECK(train(d, m, zero, {}, 3).params == build_model(m, 3));

  const std::string csv = loss_log_csv(a.log);
  CHECK(csv.rfind("iteration,loss_cls,loss_reg,loss_total,lr\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("training step gradient matches finite differences") {
  const ModelConfig m = tiny_model();
  const Dataset d = tiny_data();
  std::vector<PreparedImage> batch{prepare_image(d.samples[0], 12, 1, {}), prepare_image(d.samples[1], 12, 2, {})};
  const ParamSet init = build_model(m, 5);
  // Freeze the OHEM selection so the objective is smooth in the parameters.
  std::vector<std::vector<std::size_t>> keep;
  {
    Tape t;
    keep = build_step(t, bind_params(t, init, false), batch, m, 6).keep;
  }
  std::vector<std::string> names;
  std::vector<Tensor> values;
  for (const auto& [n, v] : init)
    if (n.find(".cls.") != std::string::npos || n.find("conv1") != std::string::npos) {
      names.push_back(n);
      values.push_back(v);
    }
  auto f = [&](Tape& t, std::span<const Var> vars) {
    BoundParams bp = bind_params(t, init, false);
    for (std::size_t i = 0; i < names.size(); ++i) bp[names[i]] = vars[i];
    return build_step(t, bp, batch, m, 6, &keep).loss;
  };
  CHECK(grad_check(f, values, 1e-6) < 1e-4);
}
