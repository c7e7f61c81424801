#include <doctest.h>

#include <limits>

#include "ift/error.hpp"
#include "ift/tensor.hpp"

using ift::Tensor;

TEST_CASE("tensor shape and payload invariants") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  for (double v : t.data) CHECK(v == 0.0);

  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ift::Error);
  CHECK_THROWS_AS(Tensor({0, 2}), ift::Error);
  CHECK_THROWS_AS(Tensor({-1}), ift::Error);
}

TEST_CASE("tensor indexing is row-major") {
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  CHECK(t.at(0, 2) == 2.0);
  CHECK(t.at(1, 0) == 3.0);
  Tensor u({2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(u.at(1, 0, 1) == 5.0);
}

TEST_CASE("seeded fills are reproducible") {
  ift::Rng a(42), b(42);
  Tensor x = Tensor::gaussian({4, 4}, a);
  Tensor y = Tensor::gaussian({4, 4}, b);
  CHECK(x.data == y.data);
  ift::Rng c(43);
  Tensor z = Tensor::gaussian({4, 4}, c);
  CHECK(x.data != z.data);
}

TEST_CASE("all_finite detects bad values") {
  Tensor t({2}, {1.0, 2.0});
  CHECK(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK(!t.all_finite());
}
