#include <gtest/gtest.h>

#include <random>

#include "lensless/fft.hpp"
#include "lensless/grid.hpp"
#include "oracles.hpp"

using namespace lensless;

namespace {

double max_abs(const ComplexGrid& a, const ComplexGrid& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Grid, RejectsEmptyDims) {
  EXPECT_THROW(RealGrid({0, 3}), DimensionError);
  EXPECT_THROW(RealGrid({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Grid, StorageIs64ByteAligned) {
  for (std::size_t n : {1, 3, 17, 100}) {
    const RealGrid g({n, n});
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(g.data()) % 64, 0u);
  }
}

TEST(Dft, DeltaTransformsToOnes) {
  RealGrid g({4, 4}, 0.0);
  g(0, 0) = 1.0;
  const ComplexGrid G = dft2(g);
  for (const auto& v : G) {
    EXPECT_DOUBLE_EQ(v.real(), 1.0);
    EXPECT_DOUBLE_EQ(v.imag(), 0.0);
  }
}

TEST(Dft, InverseRecoversInput) {
  std::mt19937_64 rng(1);
  const RealGrid g = oracle::random_grid({8, 8}, rng);
  EXPECT_LT(max_abs_diff(idft2(dft2(g)), g), 1e-12);
}

TEST(Dft, MatchesDirectSumAndParseval) {
  std::mt19937_64 rng(2);
  for (Dims d : {Dims{8, 8}, Dims{5, 7}, Dims{6, 3}, Dims{1, 9}}) {
    const RealGrid g = oracle::random_grid(d, rng);
    const ComplexGrid G = dft2(g);
    EXPECT_LT(max_abs(G, oracle::dft(g)), 1e-11) << to_string(d);
    double spec = 0;
    for (const auto& v : G) spec += std::norm(v);
    const double energy = squared_norm(g);
    EXPECT_NEAR(energy, spec / static_cast<double>(d.size()), 1e-10 * energy);
  }
}

TEST(Dft, IsLinear) {
  std::mt19937_64 rng(3);
  const RealGrid a = oracle::random_grid({6, 10}, rng), b = oracle::random_grid({6, 10}, rng);
  const double alpha = 1.7, beta = -0.3;
  const ComplexGrid lhs = dft2(alpha * a + beta * b);
  const ComplexGrid A = dft2(a), B = dft2(b);
  double scale = 0, err = 0;
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    err = std::max(err, std::abs(lhs[i] - (alpha * A[i] + beta * B[i])));
    scale = std::max(scale, std::abs(lhs[i]));
  }
  EXPECT_LT(err, 1e-12 * scale);
}

TEST(Dft, RejectsNonFiniteInput) {
  RealGrid g({2, 2}, 0.0);
  g(1, 1) = std::nan("");
  EXPECT_THROW(dft2(g), NonFiniteError);
}

TEST(Dft, IdftRejectsNonHermitianSpectrum) {
  ComplexGrid G({4, 4}, std::complex<double>(0.0, 0.0));
  G(0, 1) = {1.0, 0.0};  // no conjugate partner at (0, 3)
  double residue = 0;
  EXPECT_THROW(idft2(G, &residue), InvalidArgument);
  ComplexGrid H = dft2(RealGrid({4, 4}, 0.25));
  EXPECT_NO_THROW(idft2(H, &residue));
  EXPECT_LT(residue, 1e-8);
}

TEST(Dft, RealTransformRoundTrip) {
  std::mt19937_64 rng(4);
  for (Dims d : {Dims{16, 16}, Dims{7, 9}, Dims{10, 1}}) {
    const RealGrid g = oracle::random_grid(d, rng);
    const RealGrid back = irfft2(rfft2(g));
    EXPECT_LT(max_abs_diff(back, g), 1e-13) << to_string(d);
  }
}

TEST(Dft, RepeatedCallsAreBitIdentical) {
  std::mt19937_64 rng(5);
  const RealGrid g = oracle::random_grid({12, 20}, rng);
  EXPECT_EQ(dft2(g), dft2(g));
  EXPECT_EQ(irfft2(rfft2(g)), irfft2(rfft2(g)));
}

TEST(PadCrop, PadPlacesBlockAtFloorOffset) {
  const RealGrid g({2, 2}, {1, 2, 3, 4});
  const RealGrid p = pad_center(g, {4, 4});
  const RealGrid expected({4, 4}, {0, 0, 0, 0,  //
                                   0, 1, 2, 0,  //
                                   0, 3, 4, 0,  //
                                   0, 0, 0, 0});
  EXPECT_EQ(p, expected);
}

TEST(PadCrop, OddSizesUseFloor) {
  const RealGrid g({1, 2}, {5, 6});
  const RealGrid p = pad_center(g, {4, 5});  // offsets (1, 1)
  EXPECT_EQ(p(1, 1), 5);
  EXPECT_EQ(p(1, 2), 6);
  EXPECT_EQ(crop_center(p, {1, 2}), g);
}

TEST(PadCrop, CropInvertsPad) {
  std::mt19937_64 rng(6);
  const RealGrid g = oracle::random_grid({5, 7}, rng);
  EXPECT_EQ(crop_center(pad_center(g, doubled(g.dims())), g.dims()), g);
}

TEST(PadCrop, AreMutuallyAdjoint) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Dims s{3 + static_cast<std::size_t>(trial % 4), 4 + static_cast<std::size_t>(trial % 3)};
    const RealGrid x = oracle::random_grid(s, rng), y = oracle::random_grid(doubled(s), rng);
    // Explicit sums on both sides.
    const RealGrid cy = crop_center(y, s), px = pad_center(x, doubled(s));
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < x.size(); ++i) lhs += cy[i] * x[i];
    for (std::size_t i = 0; i < y.size(); ++i) rhs += y[i] * px[i];
    EXPECT_NEAR(lhs, rhs, 1e-14 * (std::abs(lhs) + 1));
    EXPECT_EQ(cy, oracle::crop(y, s));
    EXPECT_EQ(px, oracle::pad(x, doubled(s)));
  }
}

TEST(PadCrop, RejectsWrongSizes) {
  const RealGrid g({4, 4}, 1.0);
  EXPECT_THROW(pad_center(g, {3, 8}), DimensionError);
  EXPECT_THROW(crop_center(g, {5, 2}), DimensionError);
}

TEST(InnerProduct, ClosedForms) {
  const RealGrid g({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(inner_product(g, RealGrid({2, 2}, 0.0)), 0.0);
  EXPECT_EQ(inner_product(g, RealGrid({2, 2}, 1.0)), 10.0);
  EXPECT_THROW(inner_product(g, RealGrid({1, 4}, 1.0)), DimensionError);
}

TEST(InnerProduct, MatchesScalarLoop) {
  std::mt19937_64 rng(8);
  const RealGrid a = oracle::random_grid({9, 11}, rng), b = oracle::random_grid({9, 11}, rng);
  double acc = 0;
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t c = 0; c < 11; ++c) acc += a(r, c) * b(r, c);
  EXPECT_EQ(inner_product(a, b), acc);
}

TEST(Shift, IfftshiftMovesCenterToOrigin) {
  RealGrid g({5, 6}, 0.0);
  g(2, 3) = 1.0;
  const RealGrid s = ifftshift(g);
  EXPECT_EQ(s(0, 0), 1.0);
  EXPECT_EQ(squared_norm(s), 1.0);
}
