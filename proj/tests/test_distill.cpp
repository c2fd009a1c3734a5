#include <catch2/catch_amalgamated.hpp>

#include "incdet/distill.hpp"
#include "incdet/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/test_util.hpp"

using namespace incdet;

TEST_CASE("class distillation loss values") {
  SECTION("teacher equal to student is zero") {
    const std::vector<std::vector<double>> p = {{0.3, 0.7}, {0.1, 0.2}};
    CHECK(class_distill_loss(p, p) == 0.0);
  }
  SECTION("m=2, teacher (1,0), student (0.5,0.5) -> 0.25") {
    CHECK(class_distill_loss({{1.0, 0.0}}, {{0.5, 0.5}}) == Catch::Approx(0.25));
  }
  SECTION("invariant to anchor permutation") {
    const std::vector<std::vector<double>> t = {{1.0, 0.0}, {0.2, 0.9}, {0.4, 0.4}};
    const std::vector<std::vector<double>> s = {{0.5, 0.5}, {0.1, 0.8}, {0.6, 0.3}};
    const std::vector<std::vector<double>> t2 = {t[2], t[0], t[1]};
    const std::vector<std::vector<double>> s2 = {s[2], s[0], s[1]};
    CHECK(class_distill_loss(t, s) == Catch::Approx(class_distill_loss(t2, s2)));
  }
  SECTION("no old classes is an error") {
    CHECK_THROWS_AS(class_distill_loss({{}}, {{}}), std::invalid_argument);
  }
}

TEST_CASE("box distillation loss values") {
  SECTION("student equal to teacher is zero") {
    const std::vector<std::array<double, 4>> t = {{0.1, 0.2, 0.3, 0.4}};
    CHECK(box_distill_loss(t, t) == 0.0);
  }
  SECTION("one anchor, residuals (0.5,0,0,0) -> 0.125") {
    CHECK(box_distill_loss({{0.5, 0, 0, 0}}, {{0, 0, 0, 0}}) == Catch::Approx(0.125));
  }
  SECTION("duplicating entries with identical residuals keeps the mean") {
    const std::vector<std::array<double, 4>> t1 = {{0.5, 0, 0, 0}};
    const std::vector<std::array<double, 4>> s1 = {{0, 0, 0, 0}};
    const std::vector<std::array<double, 4>> t2 = {{0.5, 0, 0, 0}, {0.5, 0, 0, 0}};
    const std::vector<std::array<double, 4>> s2 = {{0, 0, 0, 0}, {0, 0, 0, 0}};
    CHECK(box_distill_loss(t1, s1) == Catch::Approx(box_distill_loss(t2, s2)));
  }
  SECTION("empty selection -> 0") { CHECK(box_distill_loss({}, {}) == 0.0); }
}

TEST_CASE("feature distillation loss values") {
  Tensor a({2, 2, 2});
  Tensor b({2, 2, 2});
  SECTION("identical features -> 0") { CHECK(feature_distill_loss({a}, {a}, {}) == 0.0); }
  SECTION("all residuals 2.0 -> 1.5 (elementwise mean of smooth-L1)") {
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 2.0;
    CHECK(feature_distill_loss({b}, {a}, {}) == Catch::Approx(1.5));
  }
  SECTION("two levels sum the per-level losses") {
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 2.0;
    Tensor c({3, 1, 1});
    Tensor d = c;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = 0.5;
    const double l1 = feature_distill_loss({b}, {a}, {});
    const double l2 = feature_distill_loss({d}, {c}, {});
    CHECK(feature_distill_loss({b, d}, {a, c}, {}) == Catch::Approx(l1 + l2));
  }
  SECTION("shape mismatch is an error") {
    Tensor e({2, 2, 1});
    CHECK_THROWS_AS(feature_distill_loss({a}, {e}, {}), std::invalid_argument);
  }
}

TEST_CASE("select_teacher_boxes is deterministic, saturating, confidence-ordered") {
  DetectorModel teacher = testutil::tiny_model(2, 41, 2);  // A=2, 16x16 -> 8 anchors
  Rng rng(6);
  const Image img = testutil::random_image(16, 16, rng);
  const RawPrediction pred = teacher.forward(to_tensor(img));

  SECTION("k >= anchor count returns all anchors") {
    const auto sel = select_teacher_boxes(pred, 100);
    CHECK(static_cast<int>(sel.size()) == pred.anchor_count());
  }
  SECTION("scores are non-increasing and repeated calls identical") {
    const auto a = select_teacher_boxes(pred, 5);
    const auto b = select_teacher_boxes(pred, 5);
    REQUIRE(a.size() == 5);
    for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i - 1].score >= a[i].score);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].anchor == b[i].anchor);
      CHECK(a[i].score == b[i].score);
    }
  }
  SECTION("a hand-forced confident anchor is selected first") {
    DetectorModel forced = testutil::tiny_model(1, 42, 2);
    testutil::zero_conv(forced.cls_out);
    forced.cls_out.b[0] = 12.0;
    forced.cls_out.b[1] = -12.0;
    const Image small(8, 8);
    const RawPrediction fp = forced.forward(to_tensor(small));
    const auto sel = select_teacher_boxes(fp, 1);
    REQUIRE(sel.size() == 1);
    CHECK(sel[0].anchor == 0);
    CHECK(sel[0].score > 0.99);
  }
}

TEST_CASE("distillation terms vanish when student equals the expanded teacher") {
  DetectorModel old_model = testutil::tiny_model_two_level(3, 91);
  DetectorModel student = old_model.expand_class_head(1, {"extra"}, 92);
  FrozenTeacher teacher(old_model);
  DistillConfig cfg;
  Rng rng(14);
  for (int i = 0; i < 10; ++i) {
    const Image img = testutil::random_image(24, 16, rng);
    TrainSample s;
    s.image = img;
    s.gt = {};  // no new-class positives either
    const LossBreakdown b = image_loss(student, &teacher, s, cfg, nullptr);
    CHECK(b.dist_clas < 1e-10);
    CHECK(b.dist_bbox < 1e-10);
    CHECK(b.dist_feat < 1e-10);
  }
}

TEST_CASE("total loss reduces to plain fine-tuning when lambda2..4 are zero") {
  DetectorModel old_model = testutil::tiny_model(2, 71);
  DetectorModel student = old_model.expand_class_head(1, {"extra"}, 72);
  Rng rng(15);
  // perturb so distillation terms are non-zero
  for (Tensor* t : student.parameters())
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] += rng.normal(0.0, 0.05);
  FrozenTeacher teacher(old_model);

  TrainSample s;
  s.image = testutil::random_image(16, 16, rng);
  s.gt = {{Box{0, 0, 12, 12}, 2, 1.0}};

  DistillConfig cfg;
  const LossBreakdown with = total_loss({s}, student, &teacher, cfg);
  CHECK(with.dist_clas > 0.0);

  DistillConfig off = cfg;
  off.lambda2 = off.lambda3 = off.lambda4 = 0.0;
  const LossBreakdown reduced = total_loss({s}, student, &teacher, off);
  CHECK(reduced.total(off) == Catch::Approx(reduced.focal + off.lambda1 * reduced.regr));
  // the scalar drops exactly the distillation terms
  CHECK(with.total(cfg) ==
        Catch::Approx(reduced.total(off) + with.dist_clas + with.dist_bbox + with.dist_feat));

  SECTION("all-lambda-1 scalar is the sum of the five components") {
    CHECK(with.total(cfg) == Catch::Approx(with.focal + with.regr + with.dist_clas +
                                           with.dist_bbox + with.dist_feat));
  }
}

TEST_CASE("distillation gradients match finite differences") {
  DetectorModel old_model = testutil::tiny_model(3, 81);
  DetectorModel student = old_model.expand_class_head(1, {"extra"}, 82);
  Rng rng(16);
  for (Tensor* t : student.parameters())
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] += rng.normal(0.0, 0.05);
  const Image img = testutil::random_image(16, 16, rng);
  const Tensor in = to_tensor(img);
  const RawPrediction teacher_pred = old_model.forward(in);
  const auto selection = select_teacher_boxes(teacher_pred, 4);

  SECTION("class distillation") {
    Activations acts;
    const RawPrediction sp = student.forward(in, &acts);
    PredGrads dpred;
    class_distill_dense(teacher_pred, sp, nullptr, &dpred);
    ModelGrads grads = student.make_grads();
    student.backward(acts, sp, dpred, grads);
    auto loss = [&](const DetectorModel& m) {
      return class_distill_dense(teacher_pred, m.forward(in), nullptr, nullptr);
    };
    const auto rep = testutil::check_gradients(student, grads, loss);
    INFO(rep.worst_param << " analytic " << rep.worst_analytic << " fd " << rep.worst_fd);
    CHECK(rep.max_rel_err < 1e-4);
  }
  SECTION("box distillation") {
    Activations acts;
    const RawPrediction sp = student.forward(in, &acts);
    PredGrads dpred;
    box_distill_dense(selection, sp, &dpred);
    ModelGrads grads = student.make_grads();
    student.backward(acts, sp, dpred, grads);
    auto loss = [&](const DetectorModel& m) {
      return box_distill_dense(selection, m.forward(in), nullptr);
    };
    const auto rep = testutil::check_gradients(student, grads, loss);
    INFO(rep.worst_param << " analytic " << rep.worst_analytic << " fd " << rep.worst_fd);
    CHECK(rep.max_rel_err < 1e-4);
  }
  SECTION("feature distillation") {
    Activations acts;
    const RawPrediction sp = student.forward(in, &acts);
    PredGrads dpred;
    feature_distill_dense(teacher_pred, sp, {}, &dpred);
    ModelGrads grads = student.make_grads();
    student.backward(acts, sp, dpred, grads);
    auto loss = [&](const DetectorModel& m) {
      return feature_distill_dense(teacher_pred, m.forward(in), {}, nullptr);
    };
    const auto rep = testutil::check_gradients(student, grads, loss);
    INFO(rep.worst_param << " analytic " << rep.worst_analytic << " fd " << rep.worst_fd);
    CHECK(rep.max_rel_err < 1e-4);
  }
}
