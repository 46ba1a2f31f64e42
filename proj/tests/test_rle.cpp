#include <gtest/gtest.h>

#include <random>

#include "viewmatch/rle.hpp"

using namespace viewmatch;

namespace {

std::vector<std::uint8_t> random_bitmap(std::mt19937_64& rng, std::size_t n, double density) {
  std::bernoulli_distribution on(density);
  std::vector<std::uint8_t> b(n);
  for (auto& x : b) x = on(rng) ? 1 : 0;
  return b;
}

double dense_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

}  // namespace

TEST(Rle, EncodeStartsWithBackgroundRun) {
  const std::vector<std::uint8_t> bitmap{1, 1, 0, 1};
  const auto m = rle::encode(bitmap, 2, 2);
  EXPECT_EQ(m.counts, (std::vector<std::uint32_t>{0, 2, 1, 1}));
  EXPECT_EQ(m.area(), 3u);
  EXPECT_EQ(rle::decode(m), bitmap);
}

TEST(Rle, KnownCocoString) {
  // counts [0,2,1,1] -> '0', '2', '1', and 1-2 = -1 -> 0x1f -> 'O'
  RleMask m{2, 2, {0, 2, 1, 1}};
  EXPECT_EQ(rle::to_string(m), "021O");
  EXPECT_EQ(rle::from_string("021O", 2, 2), m);
}

TEST(Rle, RoundTripRandomBitmaps) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t h = 1 + trial % 13, w = 1 + (trial * 7) % 11;
    const auto bitmap = random_bitmap(rng, h * w, (trial % 10) / 10.0);
    const auto m = rle::encode(bitmap, h, w);
    EXPECT_EQ(rle::decode(m), bitmap);
    EXPECT_EQ(rle::from_string(rle::to_string(m), h, w), m);
  }
}

TEST(Rle, LargeRunsSurviveStringCodec) {
  std::vector<std::uint8_t> bitmap(400 * 300, 0);
  for (std::size_t i = 1000; i < 90000; ++i) bitmap[i] = 1;
  const auto m = rle::encode(bitmap, 400, 300);
  EXPECT_EQ(rle::from_string(rle::to_string(m), 400, 300), m);
}

TEST(Rle, FromRectIsColumnMajor) {
  const auto m = rle::from_rect(4, 3, 1, 1, 3, 3);
  const auto b = rle::decode(m);
  for (std::size_t x = 0; x < 3; ++x) {
    for (std::size_t y = 0; y < 4; ++y) {
      EXPECT_EQ(b[x * 4 + y], (x >= 1 && x < 3 && y >= 1 && y < 3) ? 1 : 0);
    }
  }
}

TEST(Rle, MalformedStringsAreRejected) {
  EXPECT_THROW(rle::from_string("02", 2, 2), Error);   // covers 2 of 4 pixels
  EXPECT_THROW(rle::from_string("0\x7f", 2, 2), Error);
  EXPECT_THROW(rle::decode(RleMask{2, 2, {1, 1}}), Error);
}

TEST(RleIou, IdenticalDisjointAndDenseOracle) {
  const auto a = rle::from_rect(8, 8, 0, 0, 4, 4);
  const auto b = rle::from_rect(8, 8, 4, 4, 8, 8);
  EXPECT_EQ(rle::iou(a, a), 1.0);
  EXPECT_EQ(rle::iou(a, b), 0.0);
  EXPECT_THROW(rle::iou(a, rle::from_rect(8, 7, 0, 0, 1, 1)), Error);

  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 500; ++trial) {
    const auto ba = random_bitmap(rng, 64, 0.3), bb = random_bitmap(rng, 64, 0.5);
    EXPECT_DOUBLE_EQ(rle::iou(rle::encode(ba, 8, 8), rle::encode(bb, 8, 8)), dense_iou(ba, bb));
  }
}
