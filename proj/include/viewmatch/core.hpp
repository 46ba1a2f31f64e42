#pragma once

// Domain types shared by every viewmatch module: template banks, proposals,
// scoring configuration, score tensors and detections.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>
#include <vector>

#include "viewmatch/error.hpp"
#include "viewmatch/rle.hpp"

namespace viewmatch {

using Embedding = std::vector<float>;

/// L x d matrix of patch tokens, row-major.
struct PatchTokens {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  std::span<const float> row(std::size_t r) const {
    return std::span<const float>(values).subspan(r * dim, dim);
  }

  friend bool operator==(const PatchTokens&, const PatchTokens&) = default;
};

/// Patch-side representation: a pooled descriptor or the raw token matrix.
using PatchRepr = std::variant<Embedding, PatchTokens>;

inline bool is_pooled(const PatchRepr& r) { return std::holds_alternative<Embedding>(r); }

inline std::size_t repr_dim(const PatchRepr& r) {
  if (const auto* e = std::get_if<Embedding>(&r)) return e->size();
  return std::get<PatchTokens>(r).dim;
}

struct TemplateView {
  Embedding cls;
  PatchRepr patch;

  friend bool operator==(const TemplateView&, const TemplateView&) = default;
};

struct TemplateClass {
  std::string class_id;
  std::vector<TemplateView> views;

  friend bool operator==(const TemplateClass&, const TemplateClass&) = default;
};

struct TemplateBank {
  std::size_t dim = 0;
  bool pooled = false;
  double pooled_exponent = 0.0;  // meaningful only when pooled
  std::string metric_hint = "tanimoto";
  std::vector<TemplateClass> classes;

  std::vector<std::string> class_ids() const {
    std::vector<std::string> ids;
    ids.reserve(classes.size());
    for (const auto& c : classes) ids.push_back(c.class_id);
    return ids;
  }

  friend bool operator==(const TemplateBank&, const TemplateBank&) = default;
};

/// Pixel box, top-left corner plus extent.
struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Proposal {
  std::string proposal_id;
  std::string image_id;
  BBox bbox;
  std::optional<RleMask> mask;
  double objectness = 1.0;
  Embedding cls;
  PatchRepr patch;

  friend bool operator==(const Proposal&, const Proposal&) = default;
};

enum class Metric { tanimoto, cosine };

inline std::string_view to_string(Metric m) {
  return m == Metric::tanimoto ? "tanimoto" : "cosine";
}

inline Metric parse_metric(std::string_view s) {
  if (s == "tanimoto") return Metric::tanimoto;
  if (s == "cosine") return Metric::cosine;
  fail(ErrorKind::validation, "unknown metric '" + std::string(s) + "'");
}

struct ScoringConfig {
  double e = 1.5;       // GeM exponent
  double alpha = 0.5;   // class vs patch similarity weight
  double beta = 0.8;    // absolute vs relative score weight
  double tau = 0.02;    // softmax temperature
  double gamma = 0.1;   // objectness prior exponent
  int top_k = 5;
  Metric metric = Metric::tanimoto;
  std::optional<double> score_floor;
  bool use_prior = true;  // false treats the prior as 1 for every proposal

  friend bool operator==(const ScoringConfig&, const ScoringConfig&) = default;
};

inline ScoringConfig default_config() { return ScoringConfig{}; }

/// Throws ErrorKind::validation naming the first out-of-range field.
inline void validate_config(const ScoringConfig& cfg) {
  const auto bad = [](const char* field, double v, const char* range) {
    fail(ErrorKind::validation, std::string("config ") + field + " = " + std::to_string(v) +
                                    " outside " + range);
  };
  if (!(std::isfinite(cfg.e) && cfg.e > 0)) bad("e", cfg.e, "(0, inf)");
  if (!(cfg.alpha >= 0 && cfg.alpha <= 1)) bad("alpha", cfg.alpha, "[0, 1]");
  if (!(cfg.beta >= 0 && cfg.beta <= 1)) bad("beta", cfg.beta, "[0, 1]");
  if (!(std::isfinite(cfg.tau) && cfg.tau > 0)) bad("tau", cfg.tau, "(0, inf)");
  if (!(cfg.gamma > 0 && cfg.gamma <= 1)) bad("gamma", cfg.gamma, "(0, 1]");
  if (cfg.top_k < 1) bad("top_k", cfg.top_k, "[1, inf)");
  if (cfg.score_floor && !std::isfinite(*cfg.score_floor)) {
    bad("score_floor", *cfg.score_floor, "finite values");
  }
}

enum class Stage { abs, rel, joint, final };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::abs: return "abs";
    case Stage::rel: return "rel";
    case Stage::joint: return "joint";
    case Stage::final: return "final";
  }
  return "abs";
}

/// Proposals x classes score matrix, row-major.
struct ScoreTensor {
  Stage stage = Stage::abs;
  std::vector<std::string> proposal_ids;
  std::vector<std::string> class_ids;
  std::vector<double> values;

  std::size_t rows() const { return proposal_ids.size(); }
  std::size_t cols() const { return class_ids.size(); }
  double at(std::size_t p, std::size_t c) const { return values[p * cols() + c]; }
  double& at(std::size_t p, std::size_t c) { return values[p * cols() + c]; }
  std::span<const double> row(std::size_t p) const {
    return std::span<const double>(values).subspan(p * cols(), cols());
  }
  std::span<double> row(std::size_t p) {
    return std::span<double>(values).subspan(p * cols(), cols());
  }
};

struct Detection {
  std::string image_id;
  std::string proposal_id;
  std::string class_id;
  double score = 0.0;
  BBox bbox;
  std::optional<RleMask> mask;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct Violation {
  enum class Kind {
    empty_bank,
    empty_class,
    duplicate_class,
    dimension_mismatch,
    non_finite,
    mixed_representation,
    empty_tokens,
  };
  Kind kind;
  std::string message;
};

inline std::string_view to_string(Violation::Kind k) {
  using K = Violation::Kind;
  switch (k) {
    case K::empty_bank: return "empty_bank";
    case K::empty_class: return "empty_class";
    case K::duplicate_class: return "duplicate_class";
    case K::dimension_mismatch: return "dimension_mismatch";
    case K::non_finite: return "non_finite";
    case K::mixed_representation: return "mixed_representation";
    case K::empty_tokens: return "empty_tokens";
  }
  return "unknown";
}

namespace detail {

inline bool all_finite(std::span<const float> xs) {
  for (float x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace detail

/// Lists every structural problem in `bank`; an empty result means valid.
inline std::vector<Violation> validate_bank(const TemplateBank& bank) {
  using K = Violation::Kind;
  std::vector<Violation> out;
  if (bank.classes.empty()) out.push_back({K::empty_bank, "bank has no classes"});
  std::unordered_set<std::string> seen;
  for (const auto& cls : bank.classes) {
    if (!seen.insert(cls.class_id).second) {
      out.push_back({K::duplicate_class, "class '" + cls.class_id + "' declared twice"});
    }
    if (cls.views.empty()) {
      out.push_back({K::empty_class, "class '" + cls.class_id + "' has no views"});
    }
    for (std::size_t v = 0; v < cls.views.size(); ++v) {
      const auto& view = cls.views[v];
      const std::string where = "class '" + cls.class_id + "' view " + std::to_string(v);
      if (view.cls.size() != bank.dim) {
        out.push_back({K::dimension_mismatch, where + ": class embedding has d=" +
                                                  std::to_string(view.cls.size()) +
                                                  ", bank d=" + std::to_string(bank.dim)});
      }
      if (repr_dim(view.patch) != bank.dim) {
        out.push_back({K::dimension_mismatch, where + ": patch representation has d=" +
                                                  std::to_string(repr_dim(view.patch)) +
                                                  ", bank d=" + std::to_string(bank.dim)});
      }
      if (is_pooled(view.patch) != bank.pooled) {
        out.push_back({K::mixed_representation,
                       where + (bank.pooled ? ": raw tokens in a pooled bank"
                                            : ": pooled descriptor in a raw bank")});
      }
      bool finite = detail::all_finite(view.cls);
      if (const auto* desc = std::get_if<Embedding>(&view.patch)) {
        finite = finite && detail::all_finite(*desc);
      } else {
        const auto& tok = std::get<PatchTokens>(view.patch);
        if (tok.rows == 0) out.push_back({K::empty_tokens, where + ": zero patch tokens"});
        if (tok.values.size() != tok.rows * tok.dim) {
          out.push_back({K::dimension_mismatch, where + ": token matrix size mismatch"});
        }
        finite = finite && detail::all_finite(tok.values);
      }
      if (!finite) out.push_back({K::non_finite, where + ": non-finite entry"});
    }
  }
  return out;
}

}  // namespace viewmatch
