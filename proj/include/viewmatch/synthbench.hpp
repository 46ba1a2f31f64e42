#pragma once

// Deterministic synthetic embedding worlds for exercising the scoring
// pipeline without foundation models.
//
// Every class owns a unit-norm class prototype and an L x d token prototype.
// Template views, true proposals, hard negatives (blends toward another
// class) and clutter (fresh random vectors, no ground truth) are derived from
// those with Gaussian noise. Noise levels are relative: a sigma of s adds
// per-component noise of std s / sqrt(d), i.e. noise norm ~ s times the
// prototype norm. Proposals sit on a non-overlapping grid and their boxes
// coincide with ground truth, so AP measures ranking quality only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "viewmatch/core.hpp"
#include "viewmatch/evaluation.hpp"
#include "viewmatch/rle.hpp"
#include "viewmatch/scoring.hpp"

namespace viewmatch::synth {

struct ObjectnessModel {
  bool informative = true;
  double object_mean = 0.8;
  double clutter_mean = 0.3;
  double spread = 0.15;          // std of the Gaussian around each mean
  double constant_value = 0.5;   // used when !informative
};

struct WorldSpec {
  std::uint64_t seed = 1;
  std::size_t d = 64;
  std::size_t n_classes = 8;
  std::size_t views_per_class = 42;
  std::size_t tokens_per_view = 4;
  std::size_t n_images = 20;
  std::size_t proposals_per_image = 12;
  double view_noise = 0.3;
  double proposal_noise = 3.0;
  double hard_negative_rate = 0.0;
  double blend_factor = 0.4;
  double clutter_rate = 0.0;
  ObjectnessModel objectness;
};

inline void validate(const WorldSpec& s) {
  const auto rate = [](double r, const char* name) {
    if (!(r >= 0 && r <= 1)) fail(ErrorKind::validation, std::string(name) + " must lie in [0, 1]");
  };
  rate(s.hard_negative_rate, "hard_negative_rate");
  rate(s.clutter_rate, "clutter_rate");
  if (!(s.blend_factor > 0 && s.blend_factor < 1)) {
    fail(ErrorKind::validation, "blend_factor must lie in (0, 1)");
  }
  if (!(s.view_noise >= 0) || !(s.proposal_noise >= 0)) {
    fail(ErrorKind::validation, "noise levels must be >= 0");
  }
  if (s.n_classes < 2) fail(ErrorKind::validation, "a world needs at least 2 classes");
  if (s.d == 0 || s.views_per_class == 0 || s.tokens_per_view == 0) {
    fail(ErrorKind::validation, "d, views_per_class and tokens_per_view must be >= 1");
  }
  if (!(s.objectness.spread >= 0)) fail(ErrorKind::validation, "objectness spread must be >= 0");
  rate(s.objectness.constant_value, "objectness constant_value");
}

struct World {
  TemplateBank bank;
  std::vector<Proposal> proposals;
  GroundTruthSet ground_truth;
};

enum class ProposalKind { object, hard_negative, clutter };

namespace detail {

inline constexpr std::size_t kCell = 32;
inline constexpr std::size_t kBox = 28;
inline constexpr std::size_t kGridCols = 4;

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double normal() { return normal_(rng_); }
  double uniform() { return uniform_(rng_); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_);
  }

  std::vector<double> unit_vector(std::size_t d) {
    std::vector<double> v(d);
    double norm = 0;
    for (auto& x : v) {
      x = normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
  }

  // base + relative Gaussian noise, rounded to f32.
  Embedding perturb(const std::vector<double>& base, double sigma) {
    const double scale = sigma / std::sqrt(static_cast<double>(base.size()));
    Embedding out(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      out[i] = static_cast<float>(base[i] + scale * normal());
    }
    return out;
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

struct Prototype {
  std::vector<double> cls;
  std::vector<std::vector<double>> tokens;
};

inline Prototype blend(const Prototype& a, const Prototype& b, double t) {
  Prototype out = a;
  for (std::size_t i = 0; i < out.cls.size(); ++i) out.cls[i] = (1 - t) * a.cls[i] + t * b.cls[i];
  for (std::size_t r = 0; r < out.tokens.size(); ++r) {
    for (std::size_t i = 0; i < out.cls.size(); ++i) {
      out.tokens[r][i] = (1 - t) * a.tokens[r][i] + t * b.tokens[r][i];
    }
  }
  return out;
}

inline void fill(Sampler& rng, const Prototype& proto, double sigma, Embedding& cls,
                 PatchRepr& patch) {
  cls = rng.perturb(proto.cls, sigma);
  PatchTokens tok{proto.tokens.size(), proto.cls.size(), {}};
  tok.values.reserve(tok.rows * tok.dim);
  for (const auto& row : proto.tokens) {
    const auto noisy = rng.perturb(row, sigma);
    tok.values.insert(tok.values.end(), noisy.begin(), noisy.end());
  }
  patch = std::move(tok);
}

inline Prototype random_prototype(Sampler& rng, std::size_t d, std::size_t tokens) {
  Prototype p;
  p.cls = rng.unit_vector(d);
  for (std::size_t r = 0; r < tokens; ++r) p.tokens.push_back(rng.unit_vector(d));
  return p;
}

inline std::string pad(std::size_t i, int width) {
  std::ostringstream ss;
  ss.width(width);
  ss.fill('0');
  ss << i;
  return ss.str();
}

}  // namespace detail

/// Builds the world for `spec`. Identical specs give identical worlds.
inline World generate_world(const WorldSpec& spec,
                            std::vector<ProposalKind>* kinds = nullptr) {
  validate(spec);
  detail::Sampler rng(spec.seed);
  World w;

  std::vector<detail::Prototype> protos;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    protos.push_back(detail::random_prototype(rng, spec.d, spec.tokens_per_view));
  }

  w.bank.dim = spec.d;
  w.bank.pooled = false;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    TemplateClass cls{"obj_" + detail::pad(c + 1, 2), {}};
    for (std::size_t v = 0; v < spec.views_per_class; ++v) {
      TemplateView view;
      detail::fill(rng, protos[c], spec.view_noise, view.cls, view.patch);
      cls.views.push_back(std::move(view));
    }
    w.bank.classes.push_back(std::move(cls));
  }
  w.ground_truth.class_ids = w.bank.class_ids();

  const std::size_t rows = (spec.proposals_per_image + detail::kGridCols - 1) / detail::kGridCols;
  const std::size_t canvas_w = detail::kGridCols * detail::kCell;
  const std::size_t canvas_h = std::max<std::size_t>(rows, 1) * detail::kCell;
  const auto clamp01 = [](double x) { return std::clamp(x, 0.0, 1.0); };

  for (std::size_t img = 0; img < spec.n_images; ++img) {
    const std::string image_id = "img_" + detail::pad(img, 4);
    w.ground_truth.image_ids.push_back(image_id);
    for (std::size_t i = 0; i < spec.proposals_per_image; ++i) {
      Proposal p;
      p.image_id = image_id;
      p.proposal_id = image_id + "_p" + detail::pad(i, 3);
      const std::size_t x0 = (i % detail::kGridCols) * detail::kCell + 2;
      const std::size_t y0 = (i / detail::kGridCols) * detail::kCell + 2;
      p.bbox = {double(x0), double(y0), double(detail::kBox), double(detail::kBox)};
      p.mask = rle::from_rect(canvas_h, canvas_w, x0, y0, x0 + detail::kBox, y0 + detail::kBox);

      // Fixed draw order per proposal keeps worlds stable under rate changes.
      const double u_clutter = rng.uniform();
      const double u_hard = rng.uniform();
      const std::size_t own = rng.index(spec.n_classes);
      std::size_t other = rng.index(spec.n_classes - 1);
      if (other >= own) ++other;
      const double obj_noise = rng.normal();

      ProposalKind kind = ProposalKind::object;
      if (u_clutter < spec.clutter_rate) {
        kind = ProposalKind::clutter;
      } else if (u_hard < spec.hard_negative_rate) {
        kind = ProposalKind::hard_negative;
      }

      switch (kind) {
        case ProposalKind::object:
          detail::fill(rng, protos[own], spec.proposal_noise, p.cls, p.patch);
          break;
        case ProposalKind::hard_negative:
          detail::fill(rng, detail::blend(protos[own], protos[other], spec.blend_factor),
                       spec.proposal_noise, p.cls, p.patch);
          break;
        case ProposalKind::clutter:
          detail::fill(rng, detail::random_prototype(rng, spec.d, spec.tokens_per_view),
                       spec.proposal_noise, p.cls, p.patch);
          break;
      }

      const auto& om = spec.objectness;
      if (!om.informative) {
        p.objectness = om.constant_value;
      } else {
        const double mean = kind == ProposalKind::clutter ? om.clutter_mean : om.object_mean;
        p.objectness = clamp01(mean + om.spread * obj_noise);
      }

      if (kind != ProposalKind::clutter) {
        w.ground_truth.annotations.push_back(
            {image_id, w.bank.classes[own].class_id, p.bbox, p.mask, false});
      }
      if (kinds) kinds->push_back(kind);
      w.proposals.push_back(std::move(p));
    }
  }
  return w;
}

struct Variant {
  std::string name;
  ScoringConfig config;
  AggregationSpec aggregation = AggregationSpec::topk_mean(5);
};

struct AblationRow {
  std::string name;
  double map = 0.0;
};

/// The cumulative ladder: cosine class-only matching, then the Tanimoto
/// kernel, patch-descriptor integration, the joint score and the prior.
inline std::vector<Variant> default_ladder(const ScoringConfig& base = default_config()) {
  std::vector<Variant> out;
  ScoringConfig cfg = base;
  cfg.metric = Metric::cosine;
  cfg.alpha = 1.0;
  cfg.beta = 1.0;
  cfg.use_prior = false;
  const auto agg = AggregationSpec::from_config(base);
  out.push_back({"baseline (cosine, class embedding)", cfg, agg});
  cfg.metric = Metric::tanimoto;
  out.push_back({"+ Tanimoto similarity", cfg, agg});
  cfg.alpha = base.alpha;
  out.push_back({"+ GeM patch integration", cfg, agg});
  cfg.beta = base.beta;
  out.push_back({"+ joint similarity score", cfg, agg});
  cfg.use_prior = true;
  out.push_back({"+ objectness prior", cfg, agg});
  return out;
}

inline double evaluate_variant(const World& world, const Variant& v, unsigned jobs = 1) {
  const auto dets = match_images(world.proposals, world.bank, v.config, v.aggregation, jobs);
  return evaluate(dets, world.ground_truth).map;
}

/// Scores every variant on the same world.
inline std::vector<AblationRow> run_ablation_suite(const WorldSpec& spec,
                                                   const std::vector<Variant>& variants,
                                                   unsigned jobs = 1) {
  const World world = generate_world(spec);
  std::vector<AblationRow> rows;
  for (const auto& v : variants) rows.push_back({v.name, evaluate_variant(world, v, jobs)});
  return rows;
}

/// Markdown table with the change of each row relative to the previous one.
inline std::string ablation_markdown(const std::vector<AblationRow>& rows) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(3);
  ss << "| Variant | mAP | Delta |\n|---|---|---|\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ss << "| " << rows[i].name << " | " << rows[i].map << " | ";
    if (i == 0) {
      ss << "-";
    } else {
      const double delta = rows[i].map - rows[i - 1].map;
      ss << (delta > 0 ? "↑ " : delta < 0 ? "↓ " : "= ") << std::fabs(delta);
    }
    ss << " |\n";
  }
  return ss.str();
}

}  // namespace viewmatch::synth
