#include <catch2/catch_amalgamated.hpp>

#include "incdet/detector.hpp"
#include "incdet/hash.hpp"
#include "support/test_util.hpp"

using namespace incdet;

TEST_CASE("generate_anchors grid and ordering") {
  SECTION("16x16 image, stride 8, one scale/ratio -> 2x2 grid of 4 anchors") {
    AnchorConfig cfg;
    cfg.strides = {8};
    cfg.scales = {2.0};
    cfg.ratios = {1.0};
    const auto anchors = generate_anchors(cfg, 16, 16);
    REQUIRE(anchors.size() == 4);
    // centers at cell centers
    CHECK(anchors[0].center_x() == Catch::Approx(4.0));
    CHECK(anchors[0].center_y() == Catch::Approx(4.0));
    CHECK(anchors[1].center_x() == Catch::Approx(12.0));
    CHECK(anchors[3].center_y() == Catch::Approx(12.0));
  }
  SECTION("ratio 1 gives a square of side scale*stride") {
    AnchorConfig cfg;
    cfg.strides = {8};
    cfg.scales = {3.0};
    cfg.ratios = {1.0};
    const auto anchors = generate_anchors(cfg, 8, 8);
    REQUIRE(anchors.size() == 1);
    CHECK(anchors[0].width() == Catch::Approx(24.0));
    CHECK(anchors[0].height() == Catch::Approx(24.0));
  }
  SECTION("2 scales x 3 ratios -> 6 anchors per cell") {
    AnchorConfig cfg;
    cfg.strides = {8};
    cfg.scales = {1.0, 2.0};
    cfg.ratios = {0.5, 1.0, 2.0};
    CHECK(cfg.anchors_per_cell() == 6);
    CHECK(generate_anchors(cfg, 8, 8).size() == 6);
  }
  SECTION("non-divisible sizes use ceil(dim/stride)") {
    AnchorConfig cfg;
    cfg.strides = {8};
    cfg.scales = {1.0};
    cfg.ratios = {1.0};
    CHECK(generate_anchors(cfg, 20, 9).size() == 3 * 2);
  }
  SECTION("two calls are elementwise identical") {
    AnchorConfig cfg;
    const auto a = generate_anchors(cfg, 48, 48);
    const auto b = generate_anchors(cfg, 48, 48);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
  SECTION("bad configs are rejected") {
    AnchorConfig cfg;
    cfg.strides = {8, 8};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.strides = {8};
    cfg.scales = {-1.0};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}

TEST_CASE("offset encode/decode") {
  const Box anchor{0, 0, 8, 8};
  SECTION("gt equal to anchor encodes to zero") {
    const auto t = encode_offsets(anchor, anchor);
    CHECK(t[0] == Catch::Approx(0.0).margin(1e-12));
    CHECK(t[1] == Catch::Approx(0.0).margin(1e-12));
    CHECK(t[2] == Catch::Approx(0.0).margin(1e-12));
    CHECK(t[3] == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("doubled width gives tw = ln 2") {
    const Box gt = Box::from_center_size(4, 4, 16, 8);
    const auto t = encode_offsets(gt, anchor);
    CHECK(t[2] == Catch::Approx(std::log(2.0)));
    CHECK(t[3] == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("decode inverts encode under fuzz") {
    Rng rng(11);
    for (int i = 0; i < 300; ++i) {
      const double cx = rng.uniform(-20, 20), cy = rng.uniform(-20, 20);
      const Box a = Box::from_center_size(cx, cy, rng.uniform(1, 30), rng.uniform(1, 30));
      const Box gt = Box::from_center_size(rng.uniform(-20, 20), rng.uniform(-20, 20),
                                           rng.uniform(0.5, 40), rng.uniform(0.5, 40));
      const Box back = decode_offsets(encode_offsets(gt, a), a);
      CHECK(back.x_min == Catch::Approx(gt.x_min).margin(1e-6 * std::max(1.0, std::abs(gt.x_min))));
      CHECK(back.y_max == Catch::Approx(gt.y_max).margin(1e-6 * std::max(1.0, std::abs(gt.y_max))));
    }
  }
  SECTION("non-positive gt dimensions are an error") {
    CHECK_THROWS_AS(encode_offsets(Box{0, 0, 0, 5}, anchor), std::invalid_argument);
  }
}

TEST_CASE("forward shapes follow the anchor config") {
  DetectorModel m = testutil::tiny_model(3, 1, 2);  // A=2, K=3
  Rng rng(2);
  const Image img = testutil::random_image(16, 16, rng);
  const RawPrediction pred = m.forward(to_tensor(img));
  REQUIRE(pred.levels.size() == 1);
  CHECK(pred.levels[0].h == 2);
  CHECK(pred.levels[0].w == 2);
  CHECK(pred.class_logits[0].dim(0) == 2 * 3);
  CHECK(pred.box_offsets[0].dim(0) == 2 * 4);
  CHECK(pred.anchor_count() == 8);
  CHECK(pred.anchor_count() ==
        static_cast<int>(generate_anchors(m.anchor_cfg, img.width, img.height).size()));
}

TEST_CASE("detect: threshold semantics and candidate count") {
  DetectorModel m = testutil::tiny_model(3, 5, 2);
  testutil::zero_conv(m.box_out);  // offsets exactly zero -> boxes equal anchors
  Rng rng(3);
  const Image img = testutil::random_image(16, 16, rng);
  SECTION("score threshold 1.0 yields nothing (sigmoids < 1)") {
    CHECK(detect(m, img, 1.0, 0.5).empty());
  }
  SECTION("threshold 0 yields anchor-count x K candidates before NMS") {
    const auto cands = detect_candidates(m, img, 0.0);
    CHECK(static_cast<int>(cands.size()) == 8 * 3);
  }
  SECTION("per-image independence: same image, same output") {
    const auto a = detect(m, img, 0.01, 0.5);
    (void)detect(m, testutil::random_image(16, 16, rng), 0.01, 0.5);
    const auto b = detect(m, img, 0.01, 0.5);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].box == b[i].box);
      CHECK(a[i].score == b[i].score);
    }
  }
}

TEST_CASE("detect: a hand-forced confident anchor is the sole survivor") {
  DetectorModel m = testutil::tiny_model(1, 7, 2);  // K=1, A=2, 8x8 image -> 1 cell
  testutil::zero_conv(m.box_out);
  testutil::zero_conv(m.cls_out);
  m.cls_out.b[0] = 20.0;   // slot 0 of the single class: near-certain
  m.cls_out.b[1] = -20.0;  // slot 1: near-zero
  Rng rng(4);
  const Image img = testutil::random_image(8, 8, rng);
  const auto out = detect(m, img, 0.5, 0.5);
  REQUIRE(out.size() == 1);
  const auto anchors = generate_anchors(m.anchor_cfg, 8, 8);
  // decoded box is anchor slot 0 clipped to the image
  CHECK(out[0].box.x_min == Catch::Approx(std::max(0.0, anchors[0].x_min)));
  CHECK(out[0].box.x_max == Catch::Approx(std::min(8.0, anchors[0].x_max)));
  CHECK(out[0].score > 0.99);
}

TEST_CASE("expand_class_head preserves old-class outputs exactly") {
  DetectorModel old_model = testutil::tiny_model(3, 21, 2);
  DetectorModel grown = old_model.expand_class_head(1, {"new0"}, 77);
  CHECK(grown.num_classes() == 4);

  DetectorModel grown10 = testutil::tiny_model(3, 21, 2).expand_class_head(
      10, {"n0", "n1", "n2", "n3", "n4", "n5", "n6", "n7", "n8", "n9"}, 78);
  CHECK(grown10.num_classes() == 13);

  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Image img = testutil::random_image(16, 16, rng);
    const Tensor in = to_tensor(img);
    const RawPrediction po = old_model.forward(in);
    const RawPrediction pn = grown.forward(in);
    double max_diff = 0.0;
    for (int a = 0; a < po.anchor_count(); ++a) {
      for (int k = 0; k < 3; ++k)
        max_diff = std::max(max_diff, std::abs(po.class_logit(a, k) - pn.class_logit(a, k)));
      for (int j = 0; j < 4; ++j)
        max_diff = std::max(max_diff, std::abs(po.offsets(a)[static_cast<std::size_t>(j)] -
                                               pn.offsets(a)[static_cast<std::size_t>(j)]));
    }
    CHECK(max_diff == 0.0);
  }

  SECTION("new-class columns start near the foreground prior") {
    Rng r2(9);
    const Image img = testutil::random_image(16, 16, r2);
    const RawPrediction pn = grown.forward(to_tensor(img));
    // bias -ln(99) puts the sigmoid near 0.01 before feature contributions
    double mean_p = 0.0;
    for (int a = 0; a < pn.anchor_count(); ++a) mean_p += sigmoid(pn.class_logit(a, 3));
    mean_p /= pn.anchor_count();
    CHECK(mean_p < 0.2);
  }
  SECTION("class-name collisions are rejected") {
    CHECK_THROWS_AS(old_model.expand_class_head(1, {"c1"}, 5), std::invalid_argument);
  }
}

TEST_CASE("snapshot round-trips bit-exactly") {
  DetectorModel m = testutil::tiny_model_two_level(4, 33);
  const auto bytes = m.serialize();
  DetectorModel back = DetectorModel::deserialize(bytes);
  CHECK(back.labels == m.labels);
  CHECK(back.anchor_cfg == m.anchor_cfg);
  CHECK(back.arch == m.arch);
  const auto bytes2 = back.serialize();
  REQUIRE(bytes2.size() == bytes.size());
  CHECK(bytes2 == bytes);
  CHECK(sha256_hex(bytes2) == sha256_hex(bytes));

  SECTION("file save/load") {
    const std::string path = "snapshot_roundtrip_test.snap";
    m.save(path);
    DetectorModel loaded = DetectorModel::load(path);
    CHECK(loaded.serialize() == bytes);
    std::remove(path.c_str());
  }
  SECTION("corrupted magic is rejected") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(DetectorModel::deserialize(bad), std::runtime_error);
  }
}
