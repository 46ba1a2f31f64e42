#pragma once

// Command-line front end: pool, match, eval, synth, ablate, inspect.
//
// Exit codes: 0 success, 2 validation (flags, config), 3 data, 4 I/O,
// 5 degenerate kernel input, 70 internal. Logs go to `err`; machine output
// goes to files or `out`.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "viewmatch/core.hpp"
#include "viewmatch/evaluation.hpp"
#include "viewmatch/io.hpp"
#include "viewmatch/scoring.hpp"
#include "viewmatch/synthbench.hpp"

namespace viewmatch::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

enum ExitCode : int {
  kOk = 0,
  kValidation = 2,
  kData = 3,
  kIo = 4,
  kDegenerate = 5,
  kInternal = 70,
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation: return kValidation;
    case ErrorKind::data: return kData;
    case ErrorKind::io: return kIo;
    case ErrorKind::degenerate: return kDegenerate;
    case ErrorKind::internal: return kInternal;
  }
  return kInternal;
}

inline constexpr const char* kJobsEnv = "VIEWMATCH_JOBS";

inline unsigned default_jobs() {
  if (const char* v = std::getenv(kJobsEnv)) {
    try {
      const int n = std::stoi(v);
      if (n >= 1) return static_cast<unsigned>(n);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

// ---------------------------------------------------------------------------
// World specs as JSON

inline Json world_spec_to_json(const synth::WorldSpec& s) {
  Json j;
  j["seed"] = s.seed;
  j["d"] = s.d;
  j["n_classes"] = s.n_classes;
  j["views_per_class"] = s.views_per_class;
  j["tokens_per_view"] = s.tokens_per_view;
  j["n_images"] = s.n_images;
  j["proposals_per_image"] = s.proposals_per_image;
  j["view_noise"] = s.view_noise;
  j["proposal_noise"] = s.proposal_noise;
  j["hard_negative_rate"] = s.hard_negative_rate;
  j["blend_factor"] = s.blend_factor;
  j["clutter_rate"] = s.clutter_rate;
  Json o;
  o["informative"] = s.objectness.informative;
  o["object_mean"] = s.objectness.object_mean;
  o["clutter_mean"] = s.objectness.clutter_mean;
  o["spread"] = s.objectness.spread;
  o["constant_value"] = s.objectness.constant_value;
  j["objectness"] = o;
  return j;
}

inline synth::WorldSpec world_spec_from_json(const Json& j) {
  synth::WorldSpec s;
  if (!j.is_object()) fail(ErrorKind::validation, "world spec must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "seed") s.seed = v.get<std::uint64_t>();
      else if (key == "d") s.d = v.get<std::size_t>();
      else if (key == "n_classes") s.n_classes = v.get<std::size_t>();
      else if (key == "views_per_class") s.views_per_class = v.get<std::size_t>();
      else if (key == "tokens_per_view") s.tokens_per_view = v.get<std::size_t>();
      else if (key == "n_images") s.n_images = v.get<std::size_t>();
      else if (key == "proposals_per_image") s.proposals_per_image = v.get<std::size_t>();
      else if (key == "view_noise") s.view_noise = v.get<double>();
      else if (key == "proposal_noise") s.proposal_noise = v.get<double>();
      else if (key == "hard_negative_rate") s.hard_negative_rate = v.get<double>();
      else if (key == "blend_factor") s.blend_factor = v.get<double>();
      else if (key == "clutter_rate") s.clutter_rate = v.get<double>();
      else if (key == "objectness") {
        for (const auto& [ok, ov] : v.items()) {
          if (ok == "informative") s.objectness.informative = ov.get<bool>();
          else if (ok == "object_mean") s.objectness.object_mean = ov.get<double>();
          else if (ok == "clutter_mean") s.objectness.clutter_mean = ov.get<double>();
          else if (ok == "spread") s.objectness.spread = ov.get<double>();
          else if (ok == "constant_value") s.objectness.constant_value = ov.get<double>();
          else fail(ErrorKind::validation, "unknown objectness key '" + ok + "'");
        }
      } else {
        fail(ErrorKind::validation, "unknown world spec key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::validation, std::string("world spec: ") + e.what());
  }
  synth::validate(s);
  return s;
}

inline synth::WorldSpec load_world_spec(const std::optional<std::string>& path) {
  if (!path) return synth::WorldSpec{};
  try {
    return world_spec_from_json(Json::parse(io::detail::read_text(*path)));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::validation, *path + ": " + e.what());
  }
}

/// Writes bank/, proposals.jsonl, ground_truth.json and spec.json under `dir`.
inline void export_world(const synth::World& w, const synth::WorldSpec& spec, const fs::path& dir) {
  io::save_bank(w.bank, dir / "bank");
  io::save_proposals(w.proposals, dir / "proposals.jsonl");
  io::save_ground_truth(w.ground_truth, dir / "ground_truth.json");
  io::detail::write_text(dir / "spec.json", world_spec_to_json(spec).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Score-tensor dumps

inline Json tensor_to_json(Stage stage, const std::vector<MatchResult>& results) {
  Json j;
  j["stage"] = std::string(to_string(stage));
  Json class_ids = Json::array();
  Json rows = Json::array();
  for (const auto& r : results) {
    const ScoreTensor& t = stage == Stage::abs    ? r.abs
                           : stage == Stage::rel  ? r.rel
                           : stage == Stage::joint ? r.joint
                                                   : r.final;
    if (class_ids.empty()) class_ids = t.class_ids;
    for (std::size_t p = 0; p < t.rows(); ++p) {
      Json row;
      row["proposal_id"] = t.proposal_ids[p];
      row["argmax"] = t.class_ids.empty() ? Json(nullptr) : Json(t.class_ids[argmax(t.row(p))]);
      row["values"] = std::vector<double>(t.row(p).begin(), t.row(p).end());
      rows.push_back(std::move(row));
    }
  }
  j["class_ids"] = std::move(class_ids);
  j["rows"] = std::move(rows);
  return j;
}

// ---------------------------------------------------------------------------
// Subcommands

struct ScoringFlags {
  std::optional<std::string> config_path;
  std::optional<double> e, alpha, beta, tau, gamma, score_floor;
  std::optional<int> top_k;
  std::optional<std::string> metric;
  bool no_prior = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file (overrides defaults)");
    app->add_option("--e", e, "GeM exponent");
    app->add_option("--alpha", alpha, "class vs patch similarity weight");
    app->add_option("--beta", beta, "absolute vs relative score weight");
    app->add_option("--tau", tau, "softmax temperature");
    app->add_option("--gamma", gamma, "objectness prior exponent");
    app->add_option("--top-k", top_k, "views averaged per class");
    app->add_option("--metric", metric, "tanimoto | cosine");
    app->add_option("--score-floor", score_floor, "drop detections below this final score");
    app->add_flag("--no-prior", no_prior, "ignore proposal objectness");
  }

  // defaults < config file < explicit flags
  ScoringConfig resolve() const {
    ScoringConfig cfg = config_path ? io::load_config(*config_path) : default_config();
    if (e) cfg.e = *e;
    if (alpha) cfg.alpha = *alpha;
    if (beta) cfg.beta = *beta;
    if (tau) cfg.tau = *tau;
    if (gamma) cfg.gamma = *gamma;
    if (top_k) cfg.top_k = *top_k;
    if (metric) cfg.metric = parse_metric(*metric);
    if (score_floor) cfg.score_floor = *score_floor;
    if (no_prior) cfg.use_prior = false;
    validate_config(cfg);
    return cfg;
  }
};

inline void print_footprint(const TemplateBank& bank, std::ostream& out) {
  const auto fp = io::bank_footprint(bank);
  std::size_t views = 0, total = 0;
  for (const auto& f : fp) {
    views += f.views;
    total += f.cls_bytes + f.patch_bytes;
  }
  out << "kind: bank\n";
  out << "representation: " << (bank.pooled ? "pooled" : "raw") << "\n";
  if (bank.pooled) out << "pooled_exponent: " << bank.pooled_exponent << "\n";
  out << "dim: " << bank.dim << "\n";
  out << "classes: " << bank.classes.size() << "\n";
  out << "views: " << views << "\n";
  if (!bank.classes.empty() && !bank.classes.front().views.empty()) {
    const auto& view = bank.classes.front().views.front();
    std::size_t patch = repr_dim(view.patch) * sizeof(float);
    if (const auto* tok = std::get_if<PatchTokens>(&view.patch)) {
      out << "patch_tokens_per_view: " << tok->rows << "\n";
      patch = tok->values.size() * sizeof(float);
    }
    out << "patch_bytes_per_view: " << patch << "\n";
    out << "cls_bytes_per_view: " << view.cls.size() * sizeof(float) << "\n";
  }
  out << "total_bytes: " << total << "\n";
  out << "class_id\tviews\tcls_bytes\tpatch_bytes\tbytes_per_object\n";
  for (const auto& f : fp) {
    out << f.class_id << "\t" << f.views << "\t" << f.cls_bytes << "\t" << f.patch_bytes << "\t"
        << f.cls_bytes + f.patch_bytes << "\n";
  }
}

inline void print_proposals(const std::vector<Proposal>& props, std::ostream& out) {
  std::set<std::string> images;
  double lo = 1.0, hi = 0.0;
  std::size_t raw = 0, masks = 0;
  for (const auto& p : props) {
    images.insert(p.image_id);
    lo = std::min(lo, p.objectness);
    hi = std::max(hi, p.objectness);
    raw += is_pooled(p.patch) ? 0 : 1;
    masks += p.mask ? 1 : 0;
  }
  out << "kind: proposals\n";
  out << "proposals: " << props.size() << "\n";
  out << "images: " << images.size() << "\n";
  out << "dim: " << (props.empty() ? 0 : props.front().cls.size()) << "\n";
  out << "raw_token_proposals: " << raw << "\n";
  out << "with_mask: " << masks << "\n";
  if (!props.empty()) out << "objectness_range: [" << lo << ", " << hi << "]\n";
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"viewmatch: template-bank matching of object proposals"};
  app.require_subcommand(1);

  // pool
  auto* pool = app.add_subcommand("pool", "GeM-pool a raw bank's patch tokens");
  std::string pool_bank, pool_out;
  double pool_e = 1.5;
  pool->add_option("--bank", pool_bank, "raw MEB v1 directory")->required();
  pool->add_option("--e", pool_e, "GeM exponent")->required();
  pool->add_option("--out", pool_out, "output directory")->required();

  // match
  auto* match_cmd = app.add_subcommand("match", "score proposals against a bank");
  std::string match_bank, match_props, match_out, match_agg = "topk";
  std::optional<std::string> dump_dir;
  unsigned match_jobs = default_jobs();
  ScoringFlags match_flags;
  match_cmd->add_option("--bank", match_bank, "MEB v1 directory")->required();
  match_cmd->add_option("--proposals", match_props, "proposal JSONL file")->required();
  match_cmd->add_option("--out", match_out, "prediction JSON output")->required();
  match_cmd->add_option("--agg", match_agg, "view aggregation: topk | max | mean");
  match_cmd->add_option("--jobs", match_jobs, "worker threads (default $VIEWMATCH_JOBS or 1)")
      ->check(CLI::PositiveNumber);
  match_cmd->add_option("--dump-stages", dump_dir, "write abs/rel/joint/final tensors here");
  match_flags.attach(match_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "COCO-style AP of predictions");
  std::string eval_pred, eval_gt, eval_mode = "bbox";
  std::optional<std::string> eval_out;
  std::optional<std::size_t> eval_max_dets;
  eval_cmd->add_option("--pred", eval_pred, "prediction JSON")->required();
  eval_cmd->add_option("--gt", eval_gt, "ground-truth JSON")->required();
  eval_cmd->add_option("--mode", eval_mode, "bbox | mask");
  eval_cmd->add_option("--max-dets", eval_max_dets, "per-image, per-class detection cap");
  eval_cmd->add_option("--out", eval_out, "report JSON output");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic world");
  std::optional<std::string> synth_spec;
  std::string synth_out;
  synth_cmd->add_option("--spec", synth_spec, "world spec JSON (defaults when omitted)");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "run a config ladder on a synthetic world");
  std::optional<std::string> ablate_spec, ablate_grid;
  unsigned ablate_jobs = default_jobs();
  ablate_cmd->add_option("--spec", ablate_spec, "world spec JSON");
  ablate_cmd->add_option("--grid", ablate_grid,
                         "JSON list of {name, config} variants (default: cumulative ladder)");
  ablate_cmd->add_option("--jobs", ablate_jobs, "worker threads")->check(CLI::PositiveNumber);

  // inspect
  auto* inspect_cmd = app.add_subcommand("inspect", "summarize a bank or proposal file");
  std::optional<std::string> inspect_bank, inspect_props;
  auto* ib = inspect_cmd->add_option("--bank", inspect_bank, "MEB v1 directory");
  auto* ip = inspect_cmd->add_option("--proposals", inspect_props, "proposal JSONL file");
  ib->excludes(ip);
  ip->excludes(ib);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }

  try {
    if (*pool) {
      if (!(pool_e > 0)) fail(ErrorKind::validation, "--e must be positive");
      const auto report = io::pool_bank(pool_bank, pool_e, pool_out);
      out << "views: " << report.views << "\n";
      out << "raw_patch_bytes: " << report.raw_patch_bytes << "\n";
      out << "pooled_patch_bytes: " << report.pooled_patch_bytes << "\n";
      if (report.pooled_patch_bytes > 0) {
        out << "reduction: " << std::fixed << std::setprecision(1)
            << double(report.raw_patch_bytes) / double(report.pooled_patch_bytes) << "x\n";
      }
      return kOk;
    }

    if (*match_cmd) {
      const ScoringConfig cfg = match_flags.resolve();
      const AggregationSpec agg = parse_aggregation(match_agg, cfg.top_k);
      const TemplateBank bank = io::load_bank(match_bank);
      const auto proposals = io::load_proposals(match_props, bank.dim);
      err << "config: " << io::config_to_json(cfg).dump() << "\n";
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<MatchResult> stages;
      auto dets = match_images(proposals, bank, cfg, agg, match_jobs, dump_dir ? &stages : nullptr);
      const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0);
      err << "matched " << proposals.size() << " proposals x " << bank.classes.size()
          << " classes -> " << dets.size() << " detections (matching stage only: " << ms.count()
          << " ms)\n";
      io::save_predictions(std::move(dets), match_out, cfg);
      if (dump_dir) {
        for (Stage s : {Stage::abs, Stage::rel, Stage::joint, Stage::final}) {
          Json j = tensor_to_json(s, stages);
          j["config"] = io::config_to_json(cfg);
          io::detail::write_text(fs::path(*dump_dir) / (std::string(to_string(s)) + ".json"),
                                 j.dump(1) + "\n");
        }
      }
      return kOk;
    }

    if (*eval_cmd) {
      EvalOptions opts;
      opts.mode = parse_eval_mode(eval_mode);
      opts.max_dets_per_image = eval_max_dets;
      const auto preds = io::load_prediction_file(eval_pred);
      const auto gt = io::load_ground_truth(eval_gt);
      const auto report = evaluate(preds.detections, gt, opts);
      out << std::fixed << std::setprecision(3);
      out << "map " << report.map << "\n";
      out << "map@0.50 " << report.map_per_iou.front() << "\n";
      out << "map@0.75 " << report.map_per_iou[5] << "\n";
      for (std::size_t c = 0; c < report.class_ids.size(); ++c) {
        out << "ap " << report.class_ids[c] << " ";
        if (report.ap_per_class[c]) out << *report.ap_per_class[c];
        else out << "n/a";
        out << " (gt " << report.gt_counts[c] << ")\n";
      }
      if (eval_out) {
        Json j = io::report_to_json(report);
        j["config"] = preds.config ? io::config_to_json(*preds.config) : Json(nullptr);
        io::detail::write_text(*eval_out, j.dump(2) + "\n");
      }
      return kOk;
    }

    if (*synth_cmd) {
      const auto spec = load_world_spec(synth_spec);
      const auto world = synth::generate_world(spec);
      export_world(world, spec, synth_out);
      err << "wrote " << world.bank.classes.size() << " classes, " << world.proposals.size()
          << " proposals, " << world.ground_truth.annotations.size() << " ground-truth objects to "
          << synth_out << "\n";
      return kOk;
    }

    if (*ablate_cmd) {
      const auto spec = load_world_spec(ablate_spec);
      std::vector<synth::Variant> variants;
      if (ablate_grid) {
        Json grid;
        try {
          grid = Json::parse(io::detail::read_text(*ablate_grid));
        } catch (const nlohmann::json::parse_error& e) {
          fail(ErrorKind::validation, *ablate_grid + ": " + e.what());
        }
        if (!grid.is_array()) fail(ErrorKind::validation, "grid must be a JSON array");
        for (const auto& jv : grid) {
          synth::Variant v;
          v.name = io::detail::field<std::string>(jv, "name", *ablate_grid);
          v.config = jv.contains("config") ? io::merge_config(default_config(), jv["config"])
                                           : default_config();
          const std::string agg = jv.contains("agg") ? jv["agg"].get<std::string>() : "topk";
          v.aggregation = parse_aggregation(agg, v.config.top_k);
          variants.push_back(std::move(v));
        }
      } else {
        variants = synth::default_ladder();
      }
      const auto rows = synth::run_ablation_suite(spec, variants, ablate_jobs);
      out << synth::ablation_markdown(rows);
      return kOk;
    }

    if (*inspect_cmd) {
      if (inspect_bank) {
        const auto bank = io::load_bank(*inspect_bank);
        print_footprint(bank, out);
      } else if (inspect_props) {
        print_proposals(io::load_proposals(*inspect_props), out);
      } else {
        fail(ErrorKind::validation, "inspect needs --bank or --proposals");
      }
      return kOk;
    }
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error (io): " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    err << "error (internal): " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}

}  // namespace viewmatch::cli
