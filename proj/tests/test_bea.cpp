#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "aif/bea.hpp"
#include "test_util.hpp"

using namespace aif;
using test::bit_equal;
using test::random_matrix;

namespace {

Mlp make_mlp(std::size_t in, std::size_t out, std::uint64_t seed) {
  return {{random_matrix(out, in, seed), random_matrix(1, out, seed + 1),
           Activation::relu},
          {random_matrix(out, out, seed + 2),
           random_matrix(1, out, seed + 3), Activation::identity}};
}

}  // namespace

TEST_CASE("user phase with n=1, m=1 reduces to MLP(U)") {
  DenseMatrix bridge = random_matrix(1, 4, 1);
  DenseMatrix u = random_matrix(1, 4, 2);
  Mlp f = make_mlp(4, 3, 10);
  DenseMatrix got = bea_user_phase(bridge, u, f);
  CHECK(bit_equal(got, mlp_forward(u, f)));
}

TEST_CASE("user phase over identical user rows gives identical V rows") {
  DenseMatrix bridges = random_matrix(3, 4, 3);
  DenseMatrix row = random_matrix(1, 4, 4);
  DenseMatrix u(5, 4);
  for (std::size_t i = 0; i < 5; ++i)
    std::copy(row.data.begin(), row.data.end(), u.row(i));
  Mlp f = make_mlp(4, 3, 20);
  DenseMatrix got = bea_user_phase(bridges, u, f);
  DenseMatrix want = mlp_forward(row, f);
  for (std::size_t i = 0; i < got.rows; ++i)
    for (std::size_t j = 0; j < got.cols; ++j)
      CHECK(got.at(i, j) == doctest::Approx(want.at(0, j)).epsilon(1e-5));
}

TEST_CASE("user phase equals composed-primitive oracle") {
  DenseMatrix bridges = random_matrix(4, 6, 5);
  DenseMatrix u = random_matrix(8, 6, 6);
  Mlp f = make_mlp(6, 5, 30);
  DenseMatrix got = bea_user_phase(bridges, u, f);
  float scale = std::sqrt(6.0f);
  DenseMatrix w =
      softmax_rows(scale_by(matmul(bridges, u, true), 1.0f / scale));
  DenseMatrix want = mlp_forward(matmul(w, u), f);
  CHECK(bit_equal(got, want));
}

TEST_CASE("item phase with n=1 gives all-ones weights") {
  DenseMatrix bridge = random_matrix(1, 4, 7);
  DenseMatrix items = random_matrix(5, 4, 8);
  DenseMatrix w = bea_item_phase(bridge, items);
  for (float v : w.data) CHECK(v == 1.0f);
}

TEST_CASE("item orthogonal to all bridges gets uniform weights") {
  DenseMatrix bridges(3, 2);
  bridges.at(0, 0) = 1.0f;
  bridges.at(1, 0) = -2.0f;
  bridges.at(2, 0) = 0.5f;
  DenseMatrix item(1, 2);
  item.at(0, 1) = 4.0f;  // orthogonal to every bridge
  DenseMatrix w = bea_item_phase(bridges, item);
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(w.at(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("item phase equals softmax(matmul) oracle") {
  DenseMatrix bridges = random_matrix(4, 6, 9);
  DenseMatrix items = random_matrix(7, 6, 10);
  DenseMatrix got = bea_item_phase(bridges, items);
  float scale = std::sqrt(6.0f);
  DenseMatrix want =
      softmax_rows(scale_by(matmul(items, bridges, true), 1.0f / scale));
  CHECK(bit_equal(got, want));
}

TEST_CASE("serve with n=1 broadcasts the single V row") {
  DenseMatrix w(4, 1, 1.0f);
  DenseMatrix v = random_matrix(1, 5, 11);
  DenseMatrix out = bea_serve(w, v);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      CHECK(std::abs(out.at(i, j) - v.at(0, j)) <= 1e-6f);
}

TEST_CASE("serve with one-hot weights selects V rows") {
  DenseMatrix w(2, 3);
  w.at(0, 2) = 1.0f;
  w.at(1, 0) = 1.0f;
  DenseMatrix v = random_matrix(3, 4, 12);
  DenseMatrix out = bea_serve(w, v);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(out.at(0, j) == v.at(2, j));
    CHECK(out.at(1, j) == v.at(0, j));
  }
}

TEST_CASE("serve equals matmul oracle") {
  DenseMatrix w = random_matrix(6, 4, 13);
  DenseMatrix v = random_matrix(4, 5, 14);
  CHECK(bit_equal(bea_serve(w, v), matmul(w, v)));
}

TEST_CASE("serve outputs lie in the convex hull of V rows") {
  DenseMatrix bridges = random_matrix(4, 6, 15);
  DenseMatrix items = random_matrix(10, 6, 16);
  DenseMatrix w = bea_item_phase(bridges, items);
  DenseMatrix v = random_matrix(4, 5, 17);
  DenseMatrix out = bea_serve(w, v);
  for (std::size_t j = 0; j < v.cols; ++j) {
    float lo = v.at(0, j), hi = v.at(0, j);
    for (std::size_t i = 1; i < v.rows; ++i) {
      lo = std::min(lo, v.at(i, j));
      hi = std::max(hi, v.at(i, j));
    }
    for (std::size_t i = 0; i < out.rows; ++i) {
      CHECK(out.at(i, j) >= lo - 1e-6f);
      CHECK(out.at(i, j) <= hi + 1e-6f);
    }
  }
}

TEST_CASE("full cross with m=1 equals BEA with any n") {
  DenseMatrix u = random_matrix(1, 4, 18);
  DenseMatrix items = random_matrix(6, 4, 19);
  Mlp f = make_mlp(4, 3, 40);
  DenseMatrix full = full_cross_oracle(u, items, f);
  for (std::size_t n : {1ul, 4ul}) {
    DenseMatrix bridges = random_matrix(n, 4, 20 + n);
    DenseMatrix v = bea_user_phase(bridges, u, f);
    DenseMatrix w = bea_item_phase(bridges, items);
    DenseMatrix out = bea_serve(w, v);
    for (std::size_t i = 0; i < out.rows; ++i)
      for (std::size_t j = 0; j < out.cols; ++j)
        CHECK(out.at(i, j) ==
              doctest::Approx(full.at(i, j)).epsilon(1e-5));
  }
}

TEST_CASE("item equal to a bridge row concentrates its weight there") {
  DenseMatrix bridges = random_matrix(4, 6, 22);
  for (auto& x : bridges.data) x *= 3.0f;  // sharpen the softmax
  DenseMatrix item(1, 6);
  std::copy(bridges.row(2), bridges.row(2) + 6, item.row(0));
  DenseMatrix w = bea_item_phase(bridges, item);
  std::size_t argmax = 0;
  for (std::size_t j = 1; j < 4; ++j)
    if (w.at(0, j) > w.at(0, argmax)) argmax = j;
  CHECK(argmax == 2);
}

TEST_CASE("full-cross vs BEA serving cost ratio respects the bound") {
  const std::size_t b = 1024, m = 16, n = 8, d = 16, dprime = 8;
  DenseMatrix bridges = random_matrix(n, d, 23);
  DenseMatrix u = random_matrix(m, d, 24);
  DenseMatrix items = random_matrix(b, d, 25);
  Mlp f = make_mlp(d, dprime, 50);

  madd_counter = 0;
  full_cross_oracle(u, items, f);
  std::uint64_t full_cost = madd_counter;

  DenseMatrix v = bea_user_phase(bridges, u, f);
  DenseMatrix w = bea_item_phase(bridges, items);
  madd_counter = 0;
  bea_serve(w, v);
  std::uint64_t serve_cost = madd_counter;

  CHECK(serve_cost == b * n * dprime);
  CHECK(static_cast<double>(full_cost) / static_cast<double>(serve_cost) >=
        static_cast<double>(m * d) / static_cast<double>(n * dprime));
}

TEST_CASE("serving cost is b*n*d' exactly and invariant to m") {
  const std::size_t b = 64, n = 4, dprime = 8, d = 16;
  std::uint64_t prev = 0;
  for (std::size_t m : {4ul, 16ul, 64ul}) {
    DenseMatrix bridges = random_matrix(n, d, 26);
    DenseMatrix u = random_matrix(m, d, 27);
    DenseMatrix items = random_matrix(b, d, 28);
    Mlp f = make_mlp(d, dprime, 60);
    DenseMatrix v = bea_user_phase(bridges, u, f);
    DenseMatrix w = bea_item_phase(bridges, items);
    madd_counter = 0;
    bea_serve(w, v);
    CHECK(madd_counter == b * n * dprime);
    if (prev != 0) CHECK(madd_counter == prev);
    prev = madd_counter;
  }
}

TEST_CASE("split nearline/online execution matches a single pass") {
  DenseMatrix bridges = random_matrix(4, 6, 29);
  DenseMatrix u = random_matrix(8, 6, 30);
  DenseMatrix items = random_matrix(16, 6, 31);
  Mlp f = make_mlp(6, 5, 70);

  // single pass
  DenseMatrix v1 = bea_user_phase(bridges, u, f);
  DenseMatrix w1 = bea_item_phase(bridges, items);
  DenseMatrix out1 = bea_serve(w1, v1);

  // "nearline" item weights computed row by row, then served later
  DenseMatrix w2(items.rows, 4);
  for (std::size_t i = 0; i < items.rows; ++i) {
    DenseMatrix one(1, 6);
    std::copy(items.row(i), items.row(i) + 6, one.row(0));
    DenseMatrix wi = bea_item_phase(bridges, one);
    std::copy(wi.data.begin(), wi.data.end(), w2.row(i));
  }
  DenseMatrix out2 = bea_serve(w2, bea_user_phase(bridges, u, f));
  CHECK(bit_equal(out1, out2));
}

TEST_CASE("shape mismatches raise errors") {
  CHECK_THROWS_AS(
      bea_user_phase(DenseMatrix(2, 3), DenseMatrix(2, 4), Mlp{}),
      ShapeError);
  CHECK_THROWS_AS(bea_item_phase(DenseMatrix(2, 3), DenseMatrix(2, 4)),
                  ShapeError);
  CHECK_THROWS_AS(bea_serve(DenseMatrix(2, 3), DenseMatrix(4, 2)),
                  ShapeError);
}
