#include "doctest.h"

#include <random>

#include "icseg/rle.hpp"

using namespace icseg;

TEST_CASE("column-major runs starting with background") {
  BinaryMask m = BinaryMask::Constant(2, 3, false);
  m(0, 0) = true;
  m(1, 2) = true;
  // column-major scan: (0,0)=1 (1,0)=0 (0,1)=0 (1,1)=0 (0,2)=0 (1,2)=1
  const Rle r = rle_encode(m);
  CHECK(r.counts == std::vector<std::uint32_t>{0, 1, 4, 1});
  CHECK(r.area() == 2);
  CHECK((rle_decode(r) == m).all());
}

TEST_CASE("encode/decode round-trip on random masks") {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 100; ++t) {
    const int h = 1 + t % 13;
    const int w = 1 + (t * 7) % 17;
    std::bernoulli_distribution on(t % 2 ? 0.2 : 0.8);
    BinaryMask m(h, w);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) m(r, c) = on(rng);
    const Rle e = rle_encode(m);
    CHECK((rle_decode(e) == m).all());
    CHECK(rle_from_string(rle_to_string(e), h, w) == e);
    CHECK(rle_from_base64(rle_counts_base64(e), h, w) == e);
  }
}

TEST_CASE("compressed strings match the reference encoder") {
  // Reference strings produced by pycocotools.mask.encode / frPyObjects.
  BinaryMask m = BinaryMask::Constant(5, 7, false);
  m.block(1, 2, 3, 4).setConstant(true);
  m(0, 0) = true;
  CHECK(rle_to_string(rle_encode(m)) == "01:2H000004");

  const std::vector<double> poly{2.5, 1.0, 12.3, 3.7, 9.8, 11.2, 1.2, 8.9};
  const Rle p = rle_from_polygon(poly, 16, 20);
  CHECK(rle_to_string(p) == "g0286010O0000010O000N3Lo3");
  CHECK(p.area() == 76);
}

TEST_CASE("decode rejects counts that do not cover the raster") {
  Rle bad{2, 2, {1, 1}};
  CHECK_THROWS_AS(rle_decode(bad), std::invalid_argument);
}

TEST_CASE("merge is a pixelwise union") {
  BinaryMask a = BinaryMask::Constant(4, 4, false);
  BinaryMask b = BinaryMask::Constant(4, 4, false);
  a.topRows(1).setConstant(true);
  b.leftCols(1).setConstant(true);
  const BinaryMask u = rle_decode(rle_merge({rle_encode(a), rle_encode(b)}));
  CHECK((u == (a || b)).all());
}

TEST_CASE("base64 wire format") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
  CHECK(base64_decode("Zm9vYg==") == "foob");
  CHECK_THROWS(base64_decode("@@@"));
  const Rle r{1, 2, {1, 1}};
  // two little-endian uint32 values 1, 1
  CHECK(base64_decode(rle_counts_base64(r)) == std::string("\x01\x00\x00\x00\x01\x00\x00\x00", 8));
}
