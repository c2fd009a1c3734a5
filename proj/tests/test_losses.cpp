#include <catch2/catch_amalgamated.hpp>

#include "incdet/losses.hpp"
#include "support/gradcheck.hpp"
#include "support/test_util.hpp"

using namespace incdet;

TEST_CASE("focal loss value oracles") {
  SECTION("perfect prediction tends to zero") {
    CHECK(focal_from_prob(1.0 - 1e-9, 1, 2.0, 0.25) < 1e-6);
    CHECK(focal_from_prob(1e-9, 0, 2.0, 0.25) < 1e-6);
  }
  SECTION("p_t = 0.5, gamma = 2, alpha = 1 gives 0.25 ln 2") {
    const std::vector<std::vector<double>> probs = {{0.5}};
    const std::vector<int> targets = {0};  // positive anchor, class 0
    CHECK(focal_loss(probs, targets, 2.0, 1.0) == Catch::Approx(0.25 * std::log(2.0)));
  }
  SECTION("gamma = 0 equals an independently computed cross-entropy") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<std::vector<double>> probs(1);
      const int K = 3;
      for (int k = 0; k < K; ++k) probs[0].push_back(rng.uniform(0.02, 0.98));
      const int cls = rng.uniform_int(0, K - 1);
      const std::vector<int> targets = {cls};
      // independent binary cross-entropy oracle
      double bce = 0.0;
      for (int k = 0; k < K; ++k) {
        const double p = probs[0][static_cast<std::size_t>(k)];
        bce += (k == cls) ? -std::log(p) : -std::log(1.0 - p);
      }
      CHECK(focal_loss(probs, targets, 0.0, 1.0) == Catch::Approx(bce));
    }
  }
  SECTION("ignored anchors are excluded and positives floor the norm") {
    const std::vector<std::vector<double>> probs = {{0.5}, {0.9}};
    const std::vector<int> targets = {0, -2};  // second anchor ignored
    CHECK(focal_loss(probs, targets, 2.0, 1.0) == Catch::Approx(0.25 * std::log(2.0)));
    // all-negative input: normalization floors at one
    const std::vector<int> negatives = {-1, -1};
    CHECK(focal_loss(probs, negatives, 0.0, 1.0) ==
          Catch::Approx(-std::log(0.5) - std::log(0.1)));
  }
}

TEST_CASE("regression loss value oracles") {
  const std::vector<std::array<double, 4>> target = {{0, 0, 0, 0}};
  SECTION("pred equal to target is zero") {
    CHECK(regression_loss(target, target, {true}) == 0.0);
  }
  SECTION("single residual 0.5 -> 0.125") {
    const std::vector<std::array<double, 4>> pred = {{0.5, 0, 0, 0}};
    CHECK(regression_loss(pred, target, {true}) == Catch::Approx(0.125));
  }
  SECTION("single residual 2.0 -> 1.5") {
    const std::vector<std::array<double, 4>> pred = {{2.0, 0, 0, 0}};
    CHECK(regression_loss(pred, target, {true}) == Catch::Approx(1.5));
  }
  SECTION("zero positive anchors -> 0") {
    const std::vector<std::array<double, 4>> pred = {{2.0, 0, 0, 0}};
    CHECK(regression_loss(pred, target, {false}) == 0.0);
  }
}

namespace {

struct LossFixture {
  DetectorModel model;
  std::vector<ScoredBox> gt;
  Image image;

  LossFixture() : model(testutil::tiny_model(3, 123)), image(16, 16) {
    Rng rng(55);
    image = testutil::random_image(16, 16, rng);
    // IoU 0.5625 against the (-4,-4,12,12) anchor: a positive match
    gt.push_back({Box{0, 0, 12, 12}, 1, 1.0});
    // nudge weights away from the fresh-init regime so probabilities vary
    for (Tensor* t : model.parameters())
      for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] += rng.normal(0.0, 0.05);
  }

  ImageTargets targets() const {
    const auto anchors = generate_anchors(model.anchor_cfg, image.width, image.height);
    return build_targets(anchors, gt, model.num_classes(), 0.5, 0.4,
                         std::vector<std::uint8_t>(3, 1));
  }
};

}  // namespace

TEST_CASE("dense focal matches the array-level operation") {
  LossFixture fx;
  const Tensor in = to_tensor(fx.image);
  const RawPrediction pred = fx.model.forward(in);
  const ImageTargets tg = fx.targets();

  std::vector<std::vector<double>> probs;
  std::vector<int> anchor_targets;
  for (int a = 0; a < pred.anchor_count(); ++a) {
    std::vector<double> row;
    for (int k = 0; k < pred.num_classes; ++k) row.push_back(sigmoid(pred.class_logit(a, k)));
    probs.push_back(row);
    if (tg.assignment[static_cast<std::size_t>(a)].label == AnchorLabel::ignore)
      anchor_targets.push_back(-2);
    else
      anchor_targets.push_back(tg.anchor_class[static_cast<std::size_t>(a)]);
  }
  const double dense = focal_loss_dense(pred, tg, {2.0, 0.25}, nullptr);
  const double flat = focal_loss(probs, anchor_targets, 2.0, 0.25);
  CHECK(dense == Catch::Approx(flat));
}

TEST_CASE("focal and regression gradients match finite differences") {
  LossFixture fx;

  SECTION("focal") {
    Activations acts;
    const Tensor in = to_tensor(fx.image);
    const RawPrediction pred = fx.model.forward(in, &acts);
    const ImageTargets tg = fx.targets();
    PredGrads dpred;
    focal_loss_dense(pred, tg, {2.0, 0.25}, &dpred);
    ModelGrads grads = fx.model.make_grads();
    fx.model.backward(acts, pred, dpred, grads);

    const ImageTargets tg_copy = tg;
    auto loss = [&](const DetectorModel& m) {
      const RawPrediction p = m.forward(to_tensor(fx.image));
      return focal_loss_dense(p, tg_copy, {2.0, 0.25}, nullptr);
    };
    const auto rep = testutil::check_gradients(fx.model, grads, loss);
    INFO("worst " << rep.worst_param << " analytic " << rep.worst_analytic << " fd "
                  << rep.worst_fd);
    CHECK(rep.max_rel_err < 1e-4);
  }

  SECTION("regression") {
    Activations acts;
    const Tensor in = to_tensor(fx.image);
    const RawPrediction pred = fx.model.forward(in, &acts);
    const ImageTargets tg = fx.targets();
    REQUIRE(tg.positive_count > 0);
    PredGrads dpred;
    regression_loss_dense(pred, tg, &dpred);
    ModelGrads grads = fx.model.make_grads();
    fx.model.backward(acts, pred, dpred, grads);

    const ImageTargets tg_copy = tg;
    auto loss = [&](const DetectorModel& m) {
      const RawPrediction p = m.forward(to_tensor(fx.image));
      return regression_loss_dense(p, tg_copy, nullptr);
    };
    const auto rep = testutil::check_gradients(fx.model, grads, loss);
    INFO("worst " << rep.worst_param << " analytic " << rep.worst_analytic << " fd "
                  << rep.worst_fd);
    CHECK(rep.max_rel_err < 1e-4);
  }
}
