#pragma once

// Shared fixtures for the unit and acceptance suites: random generators,
// temporary directories and an independent straight-line reference of the
// scoring pipeline. Nothing here calls into the library's scoring code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "viewmatch/core.hpp"

namespace viewmatch::fixtures {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "viewmatch") {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            (tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline Embedding random_vector(std::mt19937_64& rng, std::size_t d, double lo = -1.0,
                               double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Embedding v(d);
  for (auto& x : v) x = static_cast<float>(u(rng));
  return v;
}

inline PatchTokens random_tokens(std::mt19937_64& rng, std::size_t rows, std::size_t d,
                                 double lo = -1.0, double hi = 1.0) {
  PatchTokens t{rows, d, {}};
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = random_vector(rng, d, lo, hi);
    t.values.insert(t.values.end(), row.begin(), row.end());
  }
  return t;
}

/// Small random bank; raw tokens when token_rows > 0, pooled-looking
/// descriptors otherwise.
inline TemplateBank random_bank(std::mt19937_64& rng, std::size_t classes, std::size_t views,
                                std::size_t d, std::size_t token_rows) {
  TemplateBank bank;
  bank.dim = d;
  bank.pooled = token_rows == 0;
  bank.pooled_exponent = bank.pooled ? 1.5 : 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    TemplateClass cls{"class_" + std::to_string(c), {}};
    for (std::size_t v = 0; v < views; ++v) {
      TemplateView view;
      view.cls = random_vector(rng, d);
      if (token_rows > 0) view.patch = random_tokens(rng, token_rows, d);
      else view.patch = random_vector(rng, d);
      cls.views.push_back(std::move(view));
    }
    bank.classes.push_back(std::move(cls));
  }
  return bank;
}

inline std::vector<Proposal> random_proposals(std::mt19937_64& rng, std::size_t n, std::size_t d,
                                              std::size_t token_rows,
                                              const std::string& image = "img") {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Proposal> out;
  for (std::size_t i = 0; i < n; ++i) {
    Proposal p;
    p.image_id = image;
    p.proposal_id = image + "_p" + std::to_string(i);
    p.bbox = {10.0 * i, 5.0, 8.0, 8.0};
    p.objectness = u(rng);
    p.cls = random_vector(rng, d);
    if (token_rows > 0) p.patch = random_tokens(rng, token_rows, d);
    else p.patch = random_vector(rng, d);
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Straight-line reference pipeline, written independently of the library.

namespace reference {

inline std::vector<long double> gem(const PatchTokens& t, long double e) {
  std::vector<long double> out(t.dim, 0.0L);
  for (std::size_t c = 0; c < t.dim; ++c) {
    long double acc = 0;
    for (std::size_t r = 0; r < t.rows; ++r) {
      const long double x = t.values[r * t.dim + c];
      acc += (x < 0 ? -1 : 1) * std::pow(std::fabs(x), e);
    }
    acc /= static_cast<long double>(t.rows);
    out[c] = (acc < 0 ? -1 : 1) * std::pow(std::fabs(acc), 1.0L / e);
  }
  return out;
}

inline std::vector<long double> widen(const PatchRepr& r, long double e) {
  if (const auto* d = std::get_if<Embedding>(&r)) return {d->begin(), d->end()};
  // The library stores pooled descriptors as f32; mirror that rounding.
  auto pooled = gem(std::get<PatchTokens>(r), e);
  for (auto& x : pooled) x = static_cast<float>(x);
  return pooled;
}

inline long double kernel(const std::vector<long double>& u, const std::vector<long double>& v,
                          bool tanimoto) {
  long double dot = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  return tanimoto ? dot / (uu + vv - dot) : dot / std::sqrt(uu * vv);
}

/// Final-stage P x C scores computed directly from the formulas.
inline std::vector<std::vector<long double>> final_scores(const std::vector<Proposal>& props,
                                                          const TemplateBank& bank,
                                                          const ScoringConfig& cfg) {
  const bool tani = cfg.metric == Metric::tanimoto;
  std::vector<std::vector<long double>> out;
  for (const auto& p : props) {
    const std::vector<long double> pc(p.cls.begin(), p.cls.end());
    const auto pd = widen(p.patch, cfg.e);
    std::vector<long double> abs_row;
    for (const auto& cls : bank.classes) {
      std::vector<long double> s;
      for (const auto& v : cls.views) {
        const std::vector<long double> tc(v.cls.begin(), v.cls.end());
        const auto td = widen(v.patch, cfg.e);
        s.push_back(cfg.alpha * kernel(pc, tc, tani) + (1 - cfg.alpha) * kernel(pd, td, tani));
      }
      std::sort(s.begin(), s.end(), std::greater<>());
      const std::size_t k = std::min<std::size_t>(s.size(), cfg.top_k);
      long double mean = 0;
      for (std::size_t i = 0; i < k; ++i) mean += s[i];
      abs_row.push_back(mean / k);
    }
    long double denom = 0;
    for (auto a : abs_row) denom += std::exp(a / cfg.tau);
    const long double prior = cfg.use_prior ? std::pow((long double)p.objectness, (long double)cfg.gamma) : 1;
    std::vector<long double> row;
    for (auto a : abs_row) {
      const long double rel = std::exp(a / cfg.tau) / denom;
      row.push_back(prior * (cfg.beta * a + (1 - cfg.beta) * rel));
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace reference

// ---------------------------------------------------------------------------
// Brute-force AP oracle: exhaustive assignment search plus direct PR
// integration. Boxes only, no ignore flags, single image.

namespace ap_oracle {

struct Box {
  double x, y, w, h;
};

inline double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  return inter == 0 ? 0.0 : inter / (a.w * a.h + b.w * b.h - inter);
}

/// Chooses, among all injective partial assignments of detections (given in
/// score order) to ground truth with IoU >= thr, the one whose per-detection
/// preference vector is lexicographically best (a match beats no match;
/// higher IoU beats lower; equal IoU prefers the earlier ground truth). This
/// is the outcome greedy-by-score matching must reproduce.
inline std::vector<int> best_assignment(const std::vector<Box>& dets, const std::vector<Box>& gts,
                                        double thr) {
  std::vector<int> current(dets.size(), -1), best;
  std::vector<bool> used(gts.size(), false);
  const auto better = [&](const std::vector<int>& a, const std::vector<int>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] == b[i]) continue;
      if (a[i] < 0) return false;
      if (b[i] < 0) return true;
      const double ia = iou(dets[i], gts[a[i]]), ib = iou(dets[i], gts[b[i]]);
      if (ia != ib) return ia > ib;
      return a[i] < b[i];
    }
    return false;
  };
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == dets.size()) {
      if (best.empty() || better(current, best)) best = current;
      return;
    }
    current[i] = -1;
    rec(i + 1);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || iou(dets[i], gts[g]) < thr) continue;
      used[g] = true;
      current[i] = static_cast<int>(g);
      rec(i + 1);
      used[g] = false;
      current[i] = -1;
    }
  };
  rec(0);
  return best;
}

/// AP by the recall-grid definition, computed with plain loops.
inline double ap_from_assignment(const std::vector<int>& assign, std::size_t num_gt) {
  if (num_gt == 0) return 0.0;
  const std::size_t n = assign.size();
  std::vector<double> rec(n), prec(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (assign[i] >= 0) ++tp;
    rec[i] = double(tp) / double(num_gt);
    prec[i] = double(tp) / double(i + 1);
  }
  double total = 0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    double p = 0;
    // Interpolated precision: best precision at any rank whose recall reaches r.
    for (std::size_t i = 0; i < n; ++i) {
      if (rec[i] >= r) p = std::max(p, prec[i]);
    }
    total += p;
  }
  return total / 101.0;
}

}  // namespace ap_oracle

}  // namespace viewmatch::fixtures
