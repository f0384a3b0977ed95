#include <doctest.h>

#include <cmath>

#include "casdet/error.hpp"
#include "casdet/geometry.hpp"
#include "casdet/verify/oracles.hpp"
#include "test_util.hpp"

using namespace casdet;
using namespace casdet::geometry;
using casdet::testing::random_box;

TEST_CASE("iou examples") {
  const Box a{0, 0, 10, 10};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, {20, 20, 30, 30}) == 0.0);
  CHECK(iou(a, {5, 0, 15, 10}) == doctest::Approx(50.0 / 150.0).epsilon(1e-15));
  CHECK(iou(a, {10, 0, 20, 10}) == 0.0);       // touching edges
  CHECK(iou({1, 1, 1, 1}, {1, 1, 1, 1}) == 0.0);  // empty union
  CHECK(iou(a, {0, 0, 0, 10}) == 0.0);            // degenerate input
}

TEST_CASE("iou is symmetric, bounded and matches the oracle") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5000; ++i) {
    const Box a = random_box(rng, 40.0);
    const Box b = random_box(rng, 40.0);
    const double v = iou(a, b);
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == doctest::Approx(verify::oracle_iou(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("encode_deltas examples") {
  const Box a{0, 0, 10, 10};
  const Deltas zero = encode_deltas(a, a);
  for (double v : zero) CHECK(v == 0.0);
  const Deltas shift = encode_deltas(a, {5, 0, 15, 10});
  CHECK(shift[0] == 0.5);
  CHECK(shift[1] == 0.0);
  CHECK(shift[2] == 0.0);
  CHECK(shift[3] == 0.0);
  const Deltas grow = encode_deltas(a, {0, 0, 20, 20});
  CHECK(grow[0] == 0.5);
  CHECK(grow[1] == 0.5);
  CHECK(grow[2] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(grow[3] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(encode_deltas({0, 0, 0, 10}, a), Error);
  CHECK_THROWS_AS(encode_deltas(a, {3, 3, 3, 8}), Error);
}

TEST_CASE("decode_deltas examples") {
  const Box a{0, 0, 10, 10};
  CHECK(decode_deltas(a, {0, 0, 0, 0}) == a);
  const Box g = decode_deltas(a, {0.5, 0.5, std::log(2.0), std::log(2.0)});
  CHECK(g.x1 == doctest::Approx(0.0));
  CHECK(g.y1 == doctest::Approx(0.0));
  CHECK(g.x2 == doctest::Approx(20.0));
  CHECK(g.y2 == doctest::Approx(20.0));
  const Box clipped = decode_deltas(a, {0.5, 0.5, std::log(2.0), std::log(2.0)}, ImageSize{16, 12});
  CHECK(clipped.x2 == 12.0);
  CHECK(clipped.y2 == 16.0);
  const Box huge = decode_deltas(a, {0, 0, 100.0, 100.0});
  CHECK(huge.width() == doctest::Approx(10.0 * 1000.0 / 16.0));
  CHECK(std::isfinite(huge.area()));
}

TEST_CASE("encode/decode round trip below the clamp") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10000; ++i) {
    const Box a = random_box(rng, 200.0, 1.0, 50.0);
    const Box t = random_box(rng, 200.0, 1.0, 50.0);
    const Box back = decode_deltas(a, encode_deltas(a, t));
    CHECK(std::abs(back.x1 - t.x1) <= 1e-9);
    CHECK(std::abs(back.y1 - t.y1) <= 1e-9);
    CHECK(std::abs(back.x2 - t.x2) <= 1e-9);
    CHECK(std::abs(back.y2 - t.y2) <= 1e-9);
  }
}

TEST_CASE("nms examples") {
  const Detection d{{0, 0, 10, 10}, 0, 0.9};
  CHECK(nms({d}, 0.5).size() == 1);
  const auto kept = nms({{{0, 0, 10, 10}, 0, 0.8}, d}, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == 0.9);
  // Equal scores: the earlier input wins.
  const auto tie = nms({{{0, 0, 10, 10}, 0, 0.5}, {{1, 0, 11, 10}, 0, 0.5}}, 0.5);
  REQUIRE(tie.size() == 1);
  CHECK(tie[0].box.x1 == 0.0);
  // IoU exactly at the threshold is kept (suppression needs IoU > threshold).
  const auto edge = nms({{{0, 0, 10, 10}, 0, 0.9}, {{5, 0, 15, 10}, 0, 0.8}}, 1.0 / 3.0);
  CHECK(edge.size() == 2);
  CHECK(nms({}, 0.5).empty());
}

TEST_CASE("nms properties and oracle match") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int s = 0; s < 300; ++s) {
    std::vector<Detection> dets;
    const int n = 1 + s % 20;
    for (int i = 0; i < n; ++i) dets.push_back({random_box(rng, 40.0), 0, u(rng)});
    const double thr = 0.3 + 0.4 * u(rng);
    const auto kept = nms(dets, thr);
    const auto want = verify::oracle_nms(dets, thr);
    REQUIRE(kept.size() == want.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      CHECK(kept[i].box == want[i].box);
      CHECK(kept[i].score == want[i].score);
      if (i > 0) CHECK(kept[i].score <= kept[i - 1].score);
      for (std::size_t j = 0; j < i; ++j) CHECK(iou(kept[i].box, kept[j].box) <= thr);
      bool found = false;
      for (const auto& d : dets) found = found || (d.box == kept[i].box && d.score == kept[i].score);
      CHECK(found);
    }
  }
}

TEST_CASE("batched_nms keeps classes apart") {
  const Box b{0, 0, 10, 10};
  const auto kept = batched_nms({{b, 0, 0.9}, {b, 1, 0.8}, {b, 0, 0.7}}, 0.5);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].class_id == 0);
  CHECK(kept[1].class_id == 1);
}

TEST_CASE("generate_anchors examples") {
  SUBCASE("single anchor") {
    const auto g = generate_anchors({8, 8}, {{8}, {8.0}, {1.0}});
    REQUIRE(g.boxes.size() == 1);
    CHECK(g.boxes[0] == Box{0, 0, 8, 8});
  }
  SUBCASE("two scales double the count") {
    const auto g = generate_anchors({32, 32}, {{8}, {8.0, 12.0}, {1.0}});
    CHECK(g.boxes.size() == 2 * 4 * 4);
  }
  SUBCASE("ratio 2 keeps the area") {
    const auto g = generate_anchors({16, 16}, {{16}, {10.0}, {2.0}});
    REQUIRE(g.boxes.size() == 1);
    CHECK(g.boxes[0].height() == doctest::Approx(10.0 * std::sqrt(2.0)));
    CHECK(g.boxes[0].width() == doctest::Approx(10.0 / std::sqrt(2.0)));
    CHECK(g.boxes[0].area() == doctest::Approx(100.0));
  }
  SUBCASE("layout: level, row, column, shape") {
    const AnchorSpec spec{{8, 16}, {12.0, 17.0}, {0.5, 1.0}};
    const auto g = generate_anchors({64, 32}, spec);
    CHECK(g.boxes.size() == (8 * 4 + 4 * 2) * 4);
    // Second level, row 1, column 0, shape 0: centre (8, 24), side scaled by 2.
    const Box& b = g.boxes[8 * 4 * 4 + (1 * 2 + 0) * 4];
    CHECK(b.center_x() == doctest::Approx(8.0));
    CHECK(b.center_y() == doctest::Approx(24.0));
    CHECK(b.area() == doctest::Approx(24.0 * 24.0));
    CHECK(generate_anchors({64, 32}, spec).boxes == g.boxes);
  }
  SUBCASE("stride must divide the image") {
    CHECK_THROWS_AS(generate_anchors({20, 20}, {{8}, {8.0}, {1.0}}), ConfigError);
    CHECK_THROWS_AS(generate_anchors({16, 16}, {{8}, {}, {1.0}}), ConfigError);
  }
}
