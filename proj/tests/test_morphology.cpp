#include "doctest.h"

#include <random>

#include "icseg/morphology.hpp"
#include "oracles.hpp"

using namespace icseg;

namespace {

BinaryMask from_grid(const oracle::Grid& g) {
  BinaryMask m(g.size(), g[0].size());
  for (std::size_t r = 0; r < g.size(); ++r)
    for (std::size_t c = 0; c < g[0].size(); ++c) m(r, c) = g[r][c] != 0;
  return m;
}

oracle::Grid random_grid(int h, int w, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution on(p);
  oracle::Grid g(h, std::vector<int>(w));
  for (auto& row : g)
    for (auto& v : row) v = on(rng);
  return g;
}

}  // namespace

TEST_CASE("connected components agree with union-find") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = random_grid(12 + trial % 5, 9 + trial % 7, 0.45, rng);
    const Components cc = connected_components(from_grid(g));
    std::vector<int> areas = cc.areas;
    std::sort(areas.begin(), areas.end());
    CHECK(areas == oracle::component_sizes(g));
    for (int id = 1; id <= cc.count(); ++id) CHECK(cc.component(id).count() == cc.areas[id - 1]);
  }
}

TEST_CASE("diagonal neighbours are separate components") {
  BinaryMask m = BinaryMask::Constant(3, 3, false);
  m(0, 0) = m(1, 1) = m(2, 2) = true;
  CHECK(connected_components(m).count() == 3);
}

TEST_CASE("component ids follow raster order") {
  BinaryMask m = BinaryMask::Constant(4, 6, false);
  m(0, 4) = true;
  m(2, 0) = m(3, 0) = true;
  const Components cc = connected_components(m);
  CHECK(cc.labels(0, 4) == 1);
  CHECK(cc.labels(2, 0) == 2);
}

TEST_CASE("3x3 erosion") {
  BinaryMask m = BinaryMask::Constant(7, 7, false);
  m.block(1, 1, 5, 5).setConstant(true);
  const BinaryMask e = erode3x3(m);
  CHECK(e.count() == 9);
  CHECK(e.block(2, 2, 3, 3).all());
  CHECK(erode3x3(BinaryMask::Constant(5, 5, true)).count() == 9);
  BinaryMask line = BinaryMask::Constant(5, 5, false);
  line.row(2).setConstant(true);
  CHECK(!erode3x3(line).any());
}

TEST_CASE("distance transform matches exhaustive search") {
  // L-shape
  oracle::Grid l(12, std::vector<int>(12, 0));
  for (int r = 1; r < 11; ++r)
    for (int c = 1; c < 5; ++c) l[r][c] = 1;
  for (int r = 7; r < 11; ++r)
    for (int c = 1; c < 11; ++c) l[r][c] = 1;
  std::mt19937_64 rng(5);
  std::vector<oracle::Grid> cases{l};
  for (int i = 0; i < 20; ++i) cases.push_back(random_grid(10 + i % 4, 8 + i % 6, 0.7, rng));
  cases.push_back(oracle::Grid(6, std::vector<int>(9, 1)));
  for (const auto& g : cases) {
    const auto want = oracle::boundary_distance(g);
    const Eigen::ArrayXXd got = distance_to_boundary(from_grid(g));
    for (std::size_t r = 0; r < g.size(); ++r)
      for (std::size_t c = 0; c < g[0].size(); ++c) CHECK(got(r, c) == doctest::Approx(want[r][c]).epsilon(1e-12));
  }
}

TEST_CASE("distance to mask") {
  BinaryMask m = BinaryMask::Constant(5, 8, false);
  CHECK(std::isinf(distance_to_mask(m)(2, 2)));
  m(1, 1) = true;
  const Eigen::ArrayXXd d = distance_to_mask(m);
  CHECK(d(1, 1) == 0.0);
  CHECK(d(4, 5) == doctest::Approx(5.0));
  CHECK(d(1, 7) == doctest::Approx(6.0));
}
