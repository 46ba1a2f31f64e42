#pragma once

// The matching pipeline. For every proposal and class:
//
//   abs   = aggregate over views of integrated_similarity   (top-K mean)
//   rel   = softmax over classes of abs / tau
//   joint = beta * abs + (1 - beta) * rel
//   final = objectness^gamma * joint                         (unnormalized)
//
// Each stage is exposed as its own ScoreTensor so it can be inspected and
// tested in isolation; match() chains them and emits detections.

#include <algorithm>
#include <atomic>
#include <exception>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "viewmatch/core.hpp"
#include "viewmatch/similarity.hpp"

namespace viewmatch {

struct AggregationSpec {
  enum class Kind { topk_mean, max, mean };
  Kind kind = Kind::topk_mean;
  int k = 5;

  static AggregationSpec topk_mean(int k) { return {Kind::topk_mean, k}; }
  static AggregationSpec max() { return {Kind::max, 1}; }
  static AggregationSpec mean() { return {Kind::mean, 1}; }
  static AggregationSpec from_config(const ScoringConfig& cfg) { return topk_mean(cfg.top_k); }
};

inline AggregationSpec parse_aggregation(std::string_view name, int k) {
  if (name == "topk" || name == "topk_mean") return AggregationSpec::topk_mean(k);
  if (name == "max") return AggregationSpec::max();
  if (name == "mean") return AggregationSpec::mean();
  fail(ErrorKind::validation, "unknown aggregation '" + std::string(name) + "'");
}

/// Reduces per-view scores. Values are sorted first so the result does not
/// depend on view order.
inline double reduce_view_scores(std::vector<double> scores, const AggregationSpec& agg) {
  if (scores.empty()) fail(ErrorKind::validation, "aggregation over zero views");
  if (agg.kind == AggregationSpec::Kind::topk_mean && agg.k < 1) {
    fail(ErrorKind::validation, "aggregation top_k must be >= 1");
  }
  std::sort(scores.begin(), scores.end(), std::greater<>());
  std::size_t take = scores.size();
  switch (agg.kind) {
    case AggregationSpec::Kind::max: return scores.front();
    case AggregationSpec::Kind::mean: break;
    case AggregationSpec::Kind::topk_mean:
      take = std::min(scores.size(), static_cast<std::size_t>(agg.k));
      break;
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < take; ++i) acc += scores[i];
  return acc / static_cast<double>(take);
}

namespace detail {

// A proposal with its patch descriptor resolved once.
struct PreparedProposal {
  std::span<const float> cls;
  Embedding owned_desc;
  std::span<const float> desc;
};

inline PreparedProposal prepare(const Proposal& p, const ScoringConfig& cfg) {
  PreparedProposal out;
  out.cls = p.cls;
  if (cfg.alpha == 1.0) return out;
  if (const auto* d = std::get_if<Embedding>(&p.patch)) {
    out.desc = *d;
  } else {
    out.owned_desc = gem_pool(std::get<PatchTokens>(p.patch), cfg.e);
    out.desc = out.owned_desc;
  }
  return out;
}

inline double class_score(const PreparedProposal& p, const TemplateClass& cls,
                          const ScoringConfig& cfg, const AggregationSpec& agg,
                          DescriptorCache& cache) {
  if (cls.views.empty()) {
    fail(ErrorKind::validation, "class '" + cls.class_id + "' has no views");
  }
  std::vector<double> per_view;
  per_view.reserve(cls.views.size());
  for (const auto& view : cls.views) {
    std::span<const float> t_desc;
    if (cfg.alpha != 1.0) t_desc = cache.get(view.patch, cfg.e);
    per_view.push_back(
        integrated_similarity(p.cls, p.desc, view.cls, t_desc, cfg.alpha, cfg.metric));
  }
  return reduce_view_scores(std::move(per_view), agg);
}

inline void check_bank_exponent(const TemplateBank& bank, const ScoringConfig& cfg) {
  if (bank.pooled && cfg.alpha != 1.0 && bank.pooled_exponent != cfg.e) {
    fail(ErrorKind::validation, "bank was pooled with e=" + std::to_string(bank.pooled_exponent) +
                                    " but matching uses e=" + std::to_string(cfg.e));
  }
}

}  // namespace detail

/// Aggregated similarity of one proposal to one class.
inline double aggregate_class_score(const Proposal& p, const TemplateClass& cls,
                                    const ScoringConfig& cfg, const AggregationSpec& agg,
                                    DescriptorCache* cache = nullptr) {
  DescriptorCache local;
  const auto prepared = detail::prepare(p, cfg);
  return detail::class_score(prepared, cls, cfg, agg, cache ? *cache : local);
}

inline ScoreTensor absolute_matrix(std::span<const Proposal> proposals, const TemplateBank& bank,
                                   const ScoringConfig& cfg, const AggregationSpec& agg,
                                   DescriptorCache* cache = nullptr) {
  validate_config(cfg);
  detail::check_bank_exponent(bank, cfg);
  DescriptorCache local;
  DescriptorCache& descriptors = cache ? *cache : local;

  ScoreTensor out;
  out.stage = Stage::abs;
  out.class_ids = bank.class_ids();
  out.proposal_ids.reserve(proposals.size());
  for (const auto& p : proposals) out.proposal_ids.push_back(p.proposal_id);
  out.values.assign(proposals.size() * bank.classes.size(), 0.0);

  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const auto& p = proposals[i];
    detail::PreparedProposal prepared;
    try {
      prepared = detail::prepare(p, cfg);
    } catch (const Error& err) {
      throw err.with_context("proposal '" + p.proposal_id + "'");
    }
    for (std::size_t c = 0; c < bank.classes.size(); ++c) {
      try {
        out.at(i, c) = detail::class_score(prepared, bank.classes[c], cfg, agg, descriptors);
      } catch (const Error& err) {
        throw err.with_context("proposal '" + p.proposal_id + "', class '" +
                               bank.classes[c].class_id + "'");
      }
    }
  }
  return out;
}

/// Row-wise softmax of abs / tau, evaluated after subtracting the row max.
inline ScoreTensor relative_matrix(const ScoreTensor& abs, double tau) {
  if (!(std::isfinite(tau) && tau > 0)) {
    fail(ErrorKind::validation, "softmax temperature must be positive");
  }
  if (abs.cols() == 0) fail(ErrorKind::validation, "softmax over zero classes");
  ScoreTensor out = abs;
  out.stage = Stage::rel;
  for (std::size_t p = 0; p < out.rows(); ++p) {
    auto row = out.row(p);
    for (double x : row) {
      if (!std::isfinite(x)) {
        fail(ErrorKind::data, "softmax: non-finite absolute score for proposal '" +
                                  out.proposal_ids[p] + "'");
      }
    }
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& x : row) {
      x = std::exp((x - peak) / tau);
      total += x;
    }
    for (double& x : row) x /= total;
  }
  return out;
}

inline ScoreTensor joint_matrix(const ScoreTensor& abs, const ScoreTensor& rel, double beta) {
  if (abs.proposal_ids != rel.proposal_ids || abs.class_ids != rel.class_ids) {
    fail(ErrorKind::data, "joint score: absolute and relative tensors disagree on labels");
  }
  if (!(beta >= 0 && beta <= 1)) fail(ErrorKind::validation, "beta outside [0, 1]");
  ScoreTensor out = abs;
  out.stage = Stage::joint;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = beta * abs.values[i] + (1.0 - beta) * rel.values[i];
  }
  return out;
}

/// objectness^gamma.
inline double scaled_prior(double objectness, double gamma) {
  if (!(objectness >= 0 && objectness <= 1)) {
    fail(ErrorKind::data, "objectness " + std::to_string(objectness) + " outside [0, 1]");
  }
  if (!(gamma > 0 && gamma <= 1)) {
    fail(ErrorKind::validation, "gamma " + std::to_string(gamma) + " outside (0, 1]");
  }
  return std::pow(objectness, gamma);
}

/// Scales every joint row by its proposal's prior. With use_prior false the
/// prior is 1 and the joint scores pass through unchanged.
inline ScoreTensor final_matrix(const ScoreTensor& joint, std::span<const Proposal> proposals,
                                double gamma, bool use_prior = true) {
  if (joint.rows() != proposals.size()) {
    fail(ErrorKind::data, "final score: " + std::to_string(joint.rows()) + " score rows but " +
                              std::to_string(proposals.size()) + " proposals");
  }
  ScoreTensor out = joint;
  out.stage = Stage::final;
  if (!use_prior) return out;
  for (std::size_t p = 0; p < out.rows(); ++p) {
    const double prior = scaled_prior(proposals[p].objectness, gamma);
    for (double& x : out.row(p)) x *= prior;
  }
  return out;
}

/// Index of the row maximum; ties go to the lowest class index.
inline std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

struct MatchResult {
  ScoreTensor abs, rel, joint, final;
  std::vector<Detection> detections;
};

/// Runs every stage for one batch of proposals and emits one detection per
/// (proposal, class) whose final score clears cfg.score_floor.
inline MatchResult match(std::span<const Proposal> proposals, const TemplateBank& bank,
                         const ScoringConfig& cfg, const AggregationSpec& agg,
                         DescriptorCache* cache = nullptr) {
  MatchResult r;
  r.abs = absolute_matrix(proposals, bank, cfg, agg, cache);
  r.rel = relative_matrix(r.abs, cfg.tau);
  r.joint = joint_matrix(r.abs, r.rel, cfg.beta);
  r.final = final_matrix(r.joint, proposals, cfg.gamma, cfg.use_prior);
  for (std::size_t p = 0; p < r.final.rows(); ++p) {
    for (std::size_t c = 0; c < r.final.cols(); ++c) {
      const double s = r.final.at(p, c);
      if (cfg.score_floor && s < *cfg.score_floor) continue;
      r.detections.push_back({proposals[p].image_id, proposals[p].proposal_id,
                              r.final.class_ids[c], s, proposals[p].bbox, proposals[p].mask});
    }
  }
  return r;
}

/// Canonical order: (image_id, proposal_id, class_id).
inline void canonical_sort(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    return std::tie(a.image_id, a.proposal_id, a.class_id) <
           std::tie(b.image_id, b.proposal_id, b.class_id);
  });
}

/// Matches every image's proposals with up to `jobs` worker threads. Workers
/// share the bank and a descriptor cache; results are merged in canonical
/// order, so the output does not depend on `jobs`.
inline std::vector<Detection> match_images(std::span<const Proposal> proposals,
                                           const TemplateBank& bank, const ScoringConfig& cfg,
                                           const AggregationSpec& agg, unsigned jobs = 1,
                                           std::vector<MatchResult>* stages = nullptr) {
  std::map<std::string, std::vector<Proposal>> by_image;
  for (const auto& p : proposals) by_image[p.image_id].push_back(p);
  std::vector<const std::vector<Proposal>*> groups;
  for (const auto& [id, group] : by_image) groups.push_back(&group);

  std::vector<MatchResult> results(groups.size());
  std::vector<std::exception_ptr> errors(groups.size());
  DescriptorCache cache;
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < groups.size(); i = next++) {
      try {
        results[i] = match(*groups[i], bank, cfg, agg, &cache);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(groups.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& err) {
      throw err.with_context("image '" + groups[i]->front().image_id + "'");
    }
  }

  std::vector<Detection> all;
  for (auto& r : results) all.insert(all.end(), r.detections.begin(), r.detections.end());
  canonical_sort(all);
  if (stages) *stages = std::move(results);
  return all;
}

}  // namespace viewmatch
