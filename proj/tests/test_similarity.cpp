#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "test_support.hpp"
#include "viewmatch/similarity.hpp"

using namespace viewmatch;

namespace {

PatchTokens tokens(std::size_t rows, std::size_t dim, std::vector<float> values) {
  return PatchTokens{rows, dim, std::move(values)};
}

// Scalar GeM oracle in long double, one column at a time.
long double gem_scalar(const std::vector<long double>& column, long double e) {
  long double acc = 0;
  for (auto x : column) acc += (x < 0 ? -1 : 1) * std::pow(std::fabs(x), e);
  acc /= static_cast<long double>(column.size());
  return (acc < 0 ? -1 : 1) * std::pow(std::fabs(acc), 1.0L / e);
}

}  // namespace

TEST(GemPool, ConstantRowsReturnTheRow) {
  const Embedding v{0.5f, -2.0f, 3.25f, 0.0f};
  PatchTokens t{5, 4, {}};
  for (int i = 0; i < 5; ++i) t.values.insert(t.values.end(), v.begin(), v.end());
  for (double e : {0.5, 1.0, 1.5, 3.0, 8.0}) {
    const auto out = gem_pool(t, e);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(out[i], v[i], 1e-6) << "e=" << e;
  }
}

TEST(GemPool, UnitExponentIsArithmeticMean) {
  const auto out = gem_pool(tokens(2, 2, {1, 3, 3, 1}), 1.0);
  EXPECT_EQ(out, (Embedding{2, 2}));
}

TEST(GemPool, FractionalExponentMatchesScalarOracle) {
  const long double expected = gem_scalar({1.0L, 4.0L}, 1.5L);
  EXPECT_NEAR(static_cast<double>(expected), 2.7256808892482095, 1e-15);  // frozen oracle value
  const auto out = gem_pool(tokens(2, 2, {1, 0, 4, 0}), 1.5);
  EXPECT_FLOAT_EQ(out[0], static_cast<float>(expected));
  EXPECT_EQ(out[1], 0.0f);
}

TEST(GemPool, NegativeEntriesUseSignedPowers) {
  // sign-preserving: column {-1, -1} pools to -1, {-8, 8} pools to 0.
  const auto out = gem_pool(tokens(2, 2, {-1, -8, -1, 8}), 3.0);
  EXPECT_NEAR(out[0], -1.0f, 1e-6);
  EXPECT_NEAR(out[1], 0.0f, 1e-6);
  const auto col = gem_scalar({-2.0L, 0.5L, 3.0L}, 2.5L);
  const auto pooled = gem_pool(tokens(3, 1, {-2.0f, 0.5f, 3.0f}), 2.5);
  EXPECT_NEAR(pooled[0], static_cast<double>(col), 1e-6);
}

TEST(GemPool, RejectsBadInput) {
  try {
    gem_pool(tokens(2, 2, {1, 2, 3, NAN}), 1.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
    EXPECT_NE(std::string(e.what()).find("row 1, column 1"), std::string::npos);
  }
  EXPECT_THROW(gem_pool(tokens(1, 2, {1, 2}), 0.0), Error);
  EXPECT_THROW(gem_pool(tokens(0, 2, {}), 1.0), Error);
}

TEST(MeanMaxPool, Basics) {
  const auto t = tokens(2, 2, {1, 3, 3, 1});
  EXPECT_EQ(mean_pool(t), (Embedding{2, 2}));
  EXPECT_EQ(max_pool(t), (Embedding{3, 3}));
  const auto single = tokens(1, 3, {0.25f, -1.0f, 7.0f});
  EXPECT_EQ(mean_pool(single), (Embedding{0.25f, -1.0f, 7.0f}));
  EXPECT_EQ(pool(t, PoolingKind::max()), max_pool(t));
  EXPECT_EQ(pool(t, PoolingKind::mean()), mean_pool(t));
}

TEST(GemPoolProperties, UnitExponentEqualsMeanOnRandomInputs) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto t = fixtures::random_tokens(rng, 1 + trial % 9, 1 + trial % 17, -5, 5);
    const auto g = gem_pool(t, 1.0);
    const auto m = mean_pool(t);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], m[i], 1e-12);
  }
}

TEST(GemPoolProperties, MonotoneInExponentAndApproachesMax) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto t = fixtures::random_tokens(rng, 6, 8, 0.0, 1.0);
    Embedding prev = gem_pool(t, 0.5);
    for (double e : {1.0, 1.5, 2.0, 4.0, 16.0, 64.0}) {
      const auto cur = gem_pool(t, e);
      for (std::size_t i = 0; i < cur.size(); ++i) EXPECT_GE(cur[i], prev[i] - 1e-6f);
      prev = cur;
    }
    const auto mx = max_pool(t);
    for (std::size_t i = 0; i < mx.size(); ++i) EXPECT_NEAR(prev[i], mx[i], 0.05);
  }
}

TEST(GemPoolProperties, RowPermutationInvariant) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = fixtures::random_tokens(rng, 7, 5);
    std::vector<std::size_t> order(t.rows);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    PatchTokens shuffled{t.rows, t.dim, {}};
    for (auto r : order) shuffled.values.insert(shuffled.values.end(), t.row(r).begin(), t.row(r).end());
    // Summation order changes, so compare at float resolution.
    const auto a = gem_pool(t, 1.5), b = gem_pool(shuffled, 1.5);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
  }
}

TEST(Tanimoto, AnalyticCases) {
  const Embedding u{0.3f, -1.2f, 2.0f};
  EXPECT_DOUBLE_EQ(tanimoto(u, u), 1.0);
  EXPECT_EQ(tanimoto(Embedding{1, 0}, Embedding{0, 1}), 0.0);
  Embedding two_u(u);
  for (auto& x : two_u) x *= 2;
  EXPECT_NEAR(tanimoto(two_u, u), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(tanimoto(Embedding{1, 0}, Embedding{-1, 0}), -1.0 / 3.0, 1e-15);
}

TEST(Tanimoto, DegenerateAndMismatch) {
  try {
    tanimoto(Embedding{0, 0}, Embedding{0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate);
  }
  EXPECT_EQ(tanimoto(Embedding{0, 0}, Embedding{1, 0}), 0.0);
  EXPECT_THROW(tanimoto(Embedding{1, 0}, Embedding{1, 0, 0}), Error);
}

TEST(Cosine, AnalyticCases) {
  const Embedding u{0.3f, -1.2f, 2.0f};
  EXPECT_NEAR(cosine(u, u), 1.0, 1e-15);
  Embedding scaled(u);
  for (auto& x : scaled) x *= 3.5f;
  EXPECT_NEAR(cosine(u, scaled), 1.0, 1e-7);
  EXPECT_NEAR(cosine(Embedding{1, 0}, Embedding{1, 1}), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_THROW(cosine(Embedding{0, 0}, Embedding{1, 0}), Error);
}

TEST(KernelProperties, SymmetryAndUpperBound) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto u = fixtures::random_vector(rng, 16), v = fixtures::random_vector(rng, 16);
    EXPECT_EQ(tanimoto(u, v), tanimoto(v, u));
    EXPECT_EQ(cosine(u, v), cosine(v, u));
    const double t = tanimoto(u, v);
    EXPECT_LE(t, 1.0);
    EXPECT_GE(t, -1.0 / 3.0);
    if (u != v) {
      EXPECT_LT(t, 1.0 - 1e-9);
    }
    EXPECT_NEAR(tanimoto(u, u), 1.0, 1e-9);
  }
}

TEST(IntegratedSimilarity, BoundariesAndBlend) {
  const Embedding cls{1, 2, 0}, desc_p{1, 0, 0}, desc_t{0, 1, 0};
  // Identical class embeddings (S_cls = 1) and orthogonal descriptors (S_patch = 0).
  const double s_cls = tanimoto(cls, cls), s_patch = tanimoto(desc_p, desc_t);
  ASSERT_EQ(s_cls, 1.0);
  ASSERT_EQ(s_patch, 0.0);
  EXPECT_EQ(integrated_similarity(cls, desc_p, cls, desc_t, 1.0, Metric::tanimoto), s_cls);
  EXPECT_EQ(integrated_similarity(cls, desc_p, cls, desc_t, 0.0, Metric::tanimoto), s_patch);
  EXPECT_EQ(integrated_similarity(cls, desc_p, cls, desc_t, 0.5, Metric::tanimoto), 0.5);
}

TEST(IntegratedSimilarity, LinearInAlpha) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 200; ++trial) {
    const auto pc = fixtures::random_vector(rng, 8), pd = fixtures::random_vector(rng, 8);
    const auto tc = fixtures::random_vector(rng, 8), td = fixtures::random_vector(rng, 8);
    for (Metric m : {Metric::tanimoto, Metric::cosine}) {
      const double one = integrated_similarity(pc, pd, tc, td, 1.0, m);
      const double zero = integrated_similarity(pc, pd, tc, td, 0.0, m);
      for (double a : {0.1, 0.25, 0.5, 0.9}) {
        EXPECT_NEAR(integrated_similarity(pc, pd, tc, td, a, m), a * one + (1 - a) * zero, 1e-12);
      }
    }
  }
}

TEST(IntegratedSimilarity, RawTokensArePooledOnTheFly) {
  std::mt19937_64 rng(16);
  Proposal p;
  p.cls = fixtures::random_vector(rng, 6);
  const auto p_tok = fixtures::random_tokens(rng, 4, 6);
  p.patch = p_tok;
  TemplateView t{fixtures::random_vector(rng, 6), fixtures::random_tokens(rng, 3, 6)};
  const auto cfg = default_config();
  const double expected = integrated_similarity(
      p.cls, gem_pool(p_tok, cfg.e), t.cls, gem_pool(std::get<PatchTokens>(t.patch), cfg.e),
      cfg.alpha, cfg.metric);
  EXPECT_EQ(integrated_similarity(p, t, cfg), expected);
  DescriptorCache cache;
  EXPECT_EQ(integrated_similarity(p, t, cfg, &cache), expected);
  EXPECT_EQ(cache.size(), 1u);
}

TEST(DescriptorCache, PoolsOncePerViewAndExponentUnderConcurrency) {
  std::mt19937_64 rng(17);
  std::vector<PatchRepr> views;
  for (int i = 0; i < 16; ++i) views.emplace_back(fixtures::random_tokens(rng, 8, 32));
  DescriptorCache cache;
  std::vector<std::jthread> threads;
  for (int w = 0; w < 8; ++w) {
    threads.emplace_back([&] {
      for (int rep = 0; rep < 20; ++rep) {
        for (const auto& v : views) {
          const auto got = cache.get(v, 1.5);
          const auto want = gem_pool(std::get<PatchTokens>(v), 1.5);
          ASSERT_TRUE(std::equal(got.begin(), got.end(), want.begin(), want.end()));
        }
      }
    });
  }
  threads.clear();
  EXPECT_EQ(cache.size(), views.size());
  (void)cache.get(views[0], 3.0);
  EXPECT_EQ(cache.size(), views.size() + 1);
}
