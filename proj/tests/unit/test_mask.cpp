#include <doctest.h>

#include "fixtures.hpp"
#include "matir/error.hpp"
#include "matir/mask.hpp"

using namespace matir;
using namespace matir::testing;

namespace {

MaskGrid to_grid(const Pixels& px) {
  MaskGrid g(static_cast<std::uint32_t>(px.size()), static_cast<std::uint32_t>(px[0].size()));
  for (std::uint32_t r = 0; r < g.height(); ++r) {
    for (std::uint32_t c = 0; c < g.width(); ++c) g.set(r, c, px[r][c] != 0);
  }
  return g;
}

Pixels to_pixels(const MaskGrid& g) {
  Pixels px(g.height(), std::vector<int>(g.width(), 0));
  for (std::uint32_t r = 0; r < g.height(); ++r) {
    for (std::uint32_t c = 0; c < g.width(); ++c) px[r][c] = g.at(r, c);
  }
  return px;
}

}  // namespace

TEST_SUITE("mask") {
  TEST_CASE("rle_decode fixed cases") {
    const auto bg = rle_decode({2, 2, {4}});
    CHECK(to_pixels(bg) == Pixels{{0, 0}, {0, 0}});
    const auto fg = rle_decode({2, 2, {0, 4}});
    CHECK(to_pixels(fg) == Pixels{{1, 1}, {1, 1}});
    // Column-major: pixel 1 is (row1,col0), pixel 2 is (row0,col1).
    const auto mixed = rle_decode({2, 2, {1, 2, 1}});
    CHECK(to_pixels(mixed) == Pixels{{0, 1}, {1, 0}});
  }

  TEST_CASE("rle_decode rejects malformed masks") {
    auto kind_of = [](const RegionMask& m) {
      try {
        rle_decode(m);
      } catch (const Error& e) {
        return e.kind();
      }
      return ErrorKind::kInvalidInput;
    };
    CHECK(kind_of({2, 2, {3}}) == ErrorKind::kMalformedMask);
    CHECK(kind_of({2, 2, {1, 0, 3}}) == ErrorKind::kMalformedMask);
    CHECK(kind_of({2, 2, {}}) == ErrorKind::kMalformedMask);
    CHECK(kind_of({0, 2, {0}}) == ErrorKind::kMalformedMask);
  }

  TEST_CASE("rle_encode fixed cases") {
    CHECK(rle_encode(MaskGrid(3, 3)).counts == std::vector<std::uint32_t>{9});
    MaskGrid one(3, 3);
    one.set(0, 0, true);
    CHECK(rle_encode(one).counts == std::vector<std::uint32_t>{0, 1, 8});
    CHECK_THROWS_AS(rle_encode(MaskGrid()), Error);
  }

  TEST_CASE("rle roundtrip over random grids") {
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
      const Pixels px = random_pixels(rng, 8, 8, 0.1 + 0.8 * (i % 10) / 10.0);
      const RegionMask m = rle_encode(to_grid(px));
      CHECK_NOTHROW(validate_mask(m));
      CHECK(m == encode_pixels(px));
      CHECK(to_pixels(rle_decode(m)) == px);
      CHECK(rle_encode(rle_decode(m)) == m);
    }
  }

  TEST_CASE("bbox_from_mask") {
    CHECK(bbox_from_mask({4, 5, {0, 20}}) == BoundingBox{0, 0, 5, 4});
    Pixels px(3, std::vector<int>(4, 0));
    px[1][2] = 1;
    CHECK(bbox_from_mask(encode_pixels(px)) == BoundingBox{2, 1, 1, 1});
    try {
      bbox_from_mask({3, 3, {9}});
      FAIL("expected empty-mask error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kEmptyMask);
    }

    Rng rng(5);
    for (int i = 0; i < 500; ++i) {
      std::uniform_int_distribution<int> dim(1, 24);
      Pixels p = random_pixels(rng, dim(rng), dim(rng), 0.05);
      p[0][0] |= (i % 7 == 0);
      bool any = false;
      for (const auto& row : p) any |= std::find(row.begin(), row.end(), 1) != row.end();
      if (!any) continue;
      CHECK(bbox_from_mask(encode_pixels(p)) == scan_bbox(p));
    }
  }

  TEST_CASE("bbox_iou") {
    const BoundingBox a{0, 0, 10, 10};
    CHECK(bbox_iou(a, a) == 1.0);
    CHECK(bbox_iou(a, {20, 20, 5, 5}) == 0.0);
    CHECK(bbox_iou(a, {5, 5, 10, 10}) == doctest::Approx(25.0 / 175.0).epsilon(1e-12));
    CHECK(bbox_iou({3, 3, 0, 0}, {3, 3, 0, 0}) == 0.0);
    CHECK(bbox_iou({0, 0, 4, 0}, {0, 0, 4, 4}) == 0.0);

    Rng rng(9);
    std::uniform_int_distribution<int> pos(0, 20), ext(0, 12);
    for (int i = 0; i < 2000; ++i) {
      const int ax = pos(rng), ay = pos(rng), aw = ext(rng), ah = ext(rng);
      const int bx = pos(rng), by = pos(rng), bw = ext(rng), bh = ext(rng);
      const BoundingBox ba{double(ax), double(ay), double(aw), double(ah)};
      const BoundingBox bb{double(bx), double(by), double(bw), double(bh)};
      const double got = bbox_iou(ba, bb);
      CHECK(got == doctest::Approx(grid_box_iou(ax, ay, aw, ah, bx, by, bw, bh)).epsilon(1e-12));
      CHECK(got == bbox_iou(bb, ba));
      CHECK(got >= 0.0);
      CHECK(got <= 1.0);
    }
  }

  TEST_CASE("mask_iou") {
    const RegionMask a = rect_mask(6, 6, 0, 0, 3, 3);
    const RegionMask b = rect_mask(6, 6, 3, 3, 3, 3);
    CHECK(mask_iou(a, a) == 1.0);
    CHECK(mask_iou(a, b) == 0.0);
    CHECK(mask_iou({6, 6, {36}}, {6, 6, {36}}) == 0.0);
    CHECK_THROWS_AS(mask_iou(a, rect_mask(5, 6, 0, 0, 1, 1)), Error);

    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
      const Pixels pa = random_pixels(rng, 16, 16, 0.4);
      const Pixels pb = random_pixels(rng, 16, 16, 0.4);
      const RegionMask ma = encode_pixels(pa), mb = encode_pixels(pb);
      CHECK(mask_iou(ma, mb) == pixel_iou(pa, pb));
      CHECK(mask_iou(ma, mb) == mask_iou(mb, ma));
    }
  }
}
