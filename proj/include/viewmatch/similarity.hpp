#pragma once

// Pooling of patch tokens into descriptors and the pairwise similarity
// kernels used for proposal/template matching.

#include <cmath>
#include <cstddef>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <variant>

#include "viewmatch/core.hpp"

namespace viewmatch {

struct PoolingKind {
  enum class Kind { gem, mean, max };
  Kind kind = Kind::gem;
  double e = 1.5;

  static PoolingKind gem(double e) { return {Kind::gem, e}; }
  static PoolingKind mean() { return {Kind::mean, 1.0}; }
  static PoolingKind max() { return {Kind::max, 1.0}; }
};

namespace detail {

inline void check_tokens(const PatchTokens& tokens) {
  if (tokens.rows == 0 || tokens.dim == 0) {
    fail(ErrorKind::data, "pooling: empty token matrix");
  }
  if (tokens.values.size() != tokens.rows * tokens.dim) {
    fail(ErrorKind::data, "pooling: token buffer does not match " +
                              std::to_string(tokens.rows) + "x" + std::to_string(tokens.dim));
  }
  for (std::size_t r = 0; r < tokens.rows; ++r) {
    for (std::size_t c = 0; c < tokens.dim; ++c) {
      if (!std::isfinite(tokens.values[r * tokens.dim + c])) {
        fail(ErrorKind::data, "pooling: non-finite token at row " + std::to_string(r) +
                                  ", column " + std::to_string(c));
      }
    }
  }
}

// sign(x) * |x|^p, total over the reals.
inline double signed_pow(double x, double p) {
  if (x == 0.0) return 0.0;
  const double m = std::pow(std::fabs(x), p);
  return x < 0 ? -m : m;
}

}  // namespace detail

/// Generalized mean over token rows with sign-preserving powers:
/// out_j = spow(mean_l spow(x_lj, e), 1/e). e = 1 is the arithmetic mean.
inline Embedding gem_pool(const PatchTokens& tokens, double e) {
  if (!(std::isfinite(e) && e > 0)) {
    fail(ErrorKind::validation, "gem_pool: exponent must be positive, got " + std::to_string(e));
  }
  detail::check_tokens(tokens);
  Embedding out(tokens.dim);
  const double inv_rows = 1.0 / static_cast<double>(tokens.rows);
  for (std::size_t c = 0; c < tokens.dim; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < tokens.rows; ++r) {
      acc += detail::signed_pow(tokens.values[r * tokens.dim + c], e);
    }
    out[c] = static_cast<float>(detail::signed_pow(acc * inv_rows, 1.0 / e));
  }
  return out;
}

inline Embedding mean_pool(const PatchTokens& tokens) {
  detail::check_tokens(tokens);
  Embedding out(tokens.dim);
  const double inv_rows = 1.0 / static_cast<double>(tokens.rows);
  for (std::size_t c = 0; c < tokens.dim; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < tokens.rows; ++r) acc += tokens.values[r * tokens.dim + c];
    out[c] = static_cast<float>(acc * inv_rows);
  }
  return out;
}

inline Embedding max_pool(const PatchTokens& tokens) {
  detail::check_tokens(tokens);
  Embedding out(tokens.row(0).begin(), tokens.row(0).end());
  for (std::size_t r = 1; r < tokens.rows; ++r) {
    for (std::size_t c = 0; c < tokens.dim; ++c) {
      out[c] = std::max(out[c], tokens.values[r * tokens.dim + c]);
    }
  }
  return out;
}

inline Embedding pool(const PatchTokens& tokens, const PoolingKind& kind) {
  switch (kind.kind) {
    case PoolingKind::Kind::gem: return gem_pool(tokens, kind.e);
    case PoolingKind::Kind::mean: return mean_pool(tokens);
    case PoolingKind::Kind::max: return max_pool(tokens);
  }
  return gem_pool(tokens, kind.e);
}

namespace detail {

struct Moments {
  double dot = 0, uu = 0, vv = 0;
};

inline Moments moments(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) {
    fail(ErrorKind::data, "similarity: dimension mismatch (" + std::to_string(u.size()) +
                              " vs " + std::to_string(v.size()) + ")");
  }
  Moments m;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double a = u[i], b = v[i];
    m.dot += a * b;
    m.uu += a * a;
    m.vv += b * b;
  }
  return m;
}

}  // namespace detail

/// Continuous Tanimoto coefficient u.v / (|u|^2 + |v|^2 - u.v), in [-1/3, 1].
inline double tanimoto(std::span<const float> u, std::span<const float> v) {
  const auto m = detail::moments(u, v);
  if (m.uu == 0.0 && m.vv == 0.0) {
    fail(ErrorKind::degenerate, "tanimoto: both vectors are zero");
  }
  return m.dot / (m.uu + m.vv - m.dot);
}

inline double cosine(std::span<const float> u, std::span<const float> v) {
  const auto m = detail::moments(u, v);
  if (m.uu == 0.0 || m.vv == 0.0) {
    fail(ErrorKind::degenerate, "cosine: zero vector");
  }
  return m.dot / (std::sqrt(m.uu) * std::sqrt(m.vv));
}

inline double similarity(Metric metric, std::span<const float> u, std::span<const float> v) {
  return metric == Metric::tanimoto ? tanimoto(u, v) : cosine(u, v);
}

/// alpha * sim(class embeddings) + (1 - alpha) * sim(patch descriptors).
inline double integrated_similarity(std::span<const float> proposal_cls,
                                    std::span<const float> proposal_desc,
                                    std::span<const float> template_cls,
                                    std::span<const float> template_desc, double alpha,
                                    Metric metric) {
  // The unused branch is skipped at the boundaries so alpha = 1 or 0
  // reproduces the single kernel exactly.
  if (alpha == 1.0) return similarity(metric, proposal_cls, template_cls);
  if (alpha == 0.0) return similarity(metric, proposal_desc, template_desc);
  return alpha * similarity(metric, proposal_cls, template_cls) +
         (1.0 - alpha) * similarity(metric, proposal_desc, template_desc);
}

/// Pooled descriptors for raw-token views, computed once per (view, e).
/// Readers share a lock; the first miss for a key takes the exclusive lock
/// and inserts. Entries are never erased, so returned spans stay valid for
/// the cache's lifetime.
class DescriptorCache {
 public:
  DescriptorCache() = default;
  DescriptorCache(const DescriptorCache&) = delete;
  DescriptorCache& operator=(const DescriptorCache&) = delete;

  std::span<const float> get(const PatchRepr& repr, double e) {
    if (const auto* desc = std::get_if<Embedding>(&repr)) return *desc;
    const Key key{&repr, e};
    {
      std::shared_lock lock(mutex_);
      if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    }
    Embedding pooled = gem_pool(std::get<PatchTokens>(repr), e);
    std::unique_lock lock(mutex_);
    auto [it, inserted] = entries_.try_emplace(key, std::move(pooled));
    return it->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

 private:
  using Key = std::pair<const void*, double>;
  mutable std::shared_mutex mutex_;
  std::map<Key, Embedding> entries_;
};

/// Integrated similarity of one proposal against one template view. Raw
/// token matrices on either side are GeM-pooled with cfg.e; pass a cache to
/// reuse template descriptors across calls.
inline double integrated_similarity(const Proposal& p, const TemplateView& t,
                                    const ScoringConfig& cfg,
                                    DescriptorCache* cache = nullptr) {
  Embedding p_owned, t_owned;
  std::span<const float> p_desc, t_desc;
  if (cfg.alpha != 1.0) {
    if (const auto* d = std::get_if<Embedding>(&p.patch)) {
      p_desc = *d;
    } else {
      p_owned = gem_pool(std::get<PatchTokens>(p.patch), cfg.e);
      p_desc = p_owned;
    }
    if (cache != nullptr) {
      t_desc = cache->get(t.patch, cfg.e);
    } else if (const auto* d = std::get_if<Embedding>(&t.patch)) {
      t_desc = *d;
    } else {
      t_owned = gem_pool(std::get<PatchTokens>(t.patch), cfg.e);
      t_desc = t_owned;
    }
  }
  return integrated_similarity(p.cls, p_desc, t.cls, t_desc, cfg.alpha, cfg.metric);
}

}  // namespace viewmatch
