#pragma once

// On-disk formats:
//
//   MEB v1 bank      directory with manifest.json plus raw little-endian f32
//                    blobs (row-major for token matrices)
//   proposals        JSON lines, embeddings inline (base64 f32) or blob refs
//   predictions      JSON object with the effective config and a detection list
//   ground truth     JSON object listing images, classes and annotations
//   eval report      JSON object
//
// docs/formats.md has byte-level examples of each.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "viewmatch/core.hpp"
#include "viewmatch/evaluation.hpp"
#include "viewmatch/rle.hpp"
#include "viewmatch/similarity.hpp"

namespace viewmatch::io {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline constexpr int kBankFormatVersion = 1;
inline constexpr int kPredictionFormatVersion = 1;

enum class FormatErrc {
  unreadable,
  bad_manifest,
  unknown_version,
  missing_blob,
  length_mismatch,
  non_finite,
  invalid_bank,
  bad_record,
};

inline std::string_view to_string(FormatErrc c) {
  switch (c) {
    case FormatErrc::unreadable: return "unreadable";
    case FormatErrc::bad_manifest: return "bad_manifest";
    case FormatErrc::unknown_version: return "unknown_version";
    case FormatErrc::missing_blob: return "missing_blob";
    case FormatErrc::length_mismatch: return "length_mismatch";
    case FormatErrc::non_finite: return "non_finite";
    case FormatErrc::invalid_bank: return "invalid_bank";
    case FormatErrc::bad_record: return "bad_record";
  }
  return "unknown";
}

class FormatError : public Error {
 public:
  FormatError(FormatErrc code, const std::string& message)
      : Error(kind_for(code), std::string(to_string(code)) + ": " + message), code_(code) {}

  FormatErrc code() const noexcept { return code_; }

 private:
  static ErrorKind kind_for(FormatErrc code) {
    return code == FormatErrc::unreadable || code == FormatErrc::missing_blob ? ErrorKind::io
                                                                               : ErrorKind::data;
  }
  FormatErrc code_;
};

[[noreturn]] inline void format_fail(FormatErrc code, const std::string& message) {
  throw FormatError(code, message);
}

// ---------------------------------------------------------------------------
// Low-level helpers

namespace detail {

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) format_fail(FormatErrc::unreadable, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

inline std::string floats_to_bytes(std::span<const float> xs) {
  std::string bytes(xs.size() * 4, '\0');
  for (std::size_t i = 0; i < xs.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(xs[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  return bytes;
}

inline std::vector<float> bytes_to_floats(std::string_view bytes) {
  std::vector<float> xs(bytes.size() / 4);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    }
    xs[i] = std::bit_cast<float>(bits);
  }
  return xs;
}

inline constexpr char kBase64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(std::string_view in) {
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t n = (std::uint32_t(std::uint8_t(in[i])) << 16) |
                            (std::uint32_t(std::uint8_t(in[i + 1])) << 8) |
                            std::uint32_t(std::uint8_t(in[i + 2]));
    out += kBase64Alphabet[(n >> 18) & 63];
    out += kBase64Alphabet[(n >> 12) & 63];
    out += kBase64Alphabet[(n >> 6) & 63];
    out += kBase64Alphabet[n & 63];
  }
  if (const std::size_t rest = in.size() - i; rest > 0) {
    std::uint32_t n = std::uint32_t(std::uint8_t(in[i])) << 16;
    if (rest == 2) n |= std::uint32_t(std::uint8_t(in[i + 1])) << 8;
    out += kBase64Alphabet[(n >> 18) & 63];
    out += kBase64Alphabet[(n >> 12) & 63];
    out += rest == 2 ? kBase64Alphabet[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::string base64_decode(std::string_view in) {
  const auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (in.size() % 4 != 0) format_fail(FormatErrc::bad_record, "base64 length not a multiple of 4");
  std::string out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = in[i + k];
      if (c == '=' && i + 4 == in.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else {
        v[k] = value(c);
        if (v[k] < 0 || pad > 0) format_fail(FormatErrc::bad_record, "invalid base64 payload");
      }
    }
    const std::uint32_t n = (std::uint32_t(v[0]) << 18) | (std::uint32_t(v[1]) << 12) |
                            (std::uint32_t(v[2]) << 6) | std::uint32_t(v[3]);
    out += static_cast<char>((n >> 16) & 0xff);
    if (pad < 2) out += static_cast<char>((n >> 8) & 0xff);
    if (pad < 1) out += static_cast<char>(n & 0xff);
  }
  return out;
}

inline void require_finite(std::span<const float> xs, const std::string& where) {
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i])) {
      format_fail(FormatErrc::non_finite, where + ": non-finite value at element " + std::to_string(i));
    }
  }
}

inline std::vector<float> read_blob(const fs::path& root, const std::string& ref,
                                    std::size_t expected, const std::string& where) {
  const fs::path path = root / ref;
  if (!fs::is_regular_file(path)) format_fail(FormatErrc::missing_blob, where + ": " + path.string());
  const std::string bytes = read_text(path);
  if (bytes.size() != expected * 4) {
    format_fail(FormatErrc::length_mismatch, where + ": " + path.string() + " has " +
                                                 std::to_string(bytes.size()) + " bytes, expected " +
                                                 std::to_string(expected * 4));
  }
  auto xs = bytes_to_floats(bytes);
  require_finite(xs, where + " (" + ref + ")");
  return xs;
}

template <typename T>
T field(const Json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    format_fail(FormatErrc::bad_record, where + ": missing field '" + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    format_fail(FormatErrc::bad_record, where + ": field '" + key + "': " + e.what());
  }
}

inline BBox bbox_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) format_fail(FormatErrc::bad_record, where + ": bbox must be [x,y,w,h]");
  BBox b;
  try {
    b = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  } catch (const nlohmann::json::exception&) {
    format_fail(FormatErrc::bad_record, where + ": bbox entries must be numbers");
  }
  if (!(std::isfinite(b.x) && std::isfinite(b.y) && b.w > 0 && b.h > 0 && std::isfinite(b.w) &&
        std::isfinite(b.h))) {
    format_fail(FormatErrc::bad_record, where + ": bbox needs finite x, y and positive w, h");
  }
  return b;
}

inline Json bbox_to_json(const BBox& b) { return Json::array({b.x, b.y, b.w, b.h}); }

inline Json mask_to_json(const RleMask& m) {
  Json j;
  j["size"] = Json::array({m.height, m.width});
  j["counts"] = rle::to_string(m);
  return j;
}

inline RleMask mask_from_json(const Json& j, const std::string& where) {
  const auto size = field<std::vector<std::size_t>>(j, "size", where + " mask");
  if (size.size() != 2) format_fail(FormatErrc::bad_record, where + ": mask size must be [h,w]");
  try {
    return rle::from_string(field<std::string>(j, "counts", where + " mask"), size[0], size[1]);
  } catch (const Error& e) {
    format_fail(FormatErrc::bad_record, where + ": " + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Template banks (MEB v1)

/// Writes `bank` as an MEB v1 directory. Output is canonical: saving a bank
/// loaded from an archive reproduces the archive byte for byte.
inline void save_bank(const TemplateBank& bank, const fs::path& dir) {
  fs::create_directories(dir / "blobs");
  Json manifest;
  manifest["format_version"] = kBankFormatVersion;
  manifest["dim"] = bank.dim;
  manifest["metric_hint"] = bank.metric_hint;
  manifest["pooled"] = bank.pooled;
  manifest["pooled_exponent"] = bank.pooled ? Json(bank.pooled_exponent) : Json(nullptr);
  Json classes = Json::array();
  for (std::size_t c = 0; c < bank.classes.size(); ++c) {
    const auto& cls = bank.classes[c];
    Json views = Json::array();
    for (std::size_t v = 0; v < cls.views.size(); ++v) {
      const auto& view = cls.views[v];
      const std::string stem = "blobs/c" + std::to_string(c) + "_v" + std::to_string(v);
      Json jv;
      jv["cls"] = stem + ".cls.f32";
      jv["patch"] = stem + ".patch.f32";
      detail::write_text(dir / (stem + ".cls.f32"), detail::floats_to_bytes(view.cls));
      if (const auto* desc = std::get_if<Embedding>(&view.patch)) {
        detail::write_text(dir / (stem + ".patch.f32"), detail::floats_to_bytes(*desc));
      } else {
        const auto& tok = std::get<PatchTokens>(view.patch);
        jv["patch_tokens"] = tok.rows;
        detail::write_text(dir / (stem + ".patch.f32"), detail::floats_to_bytes(tok.values));
      }
      views.push_back(std::move(jv));
    }
    Json jc;
    jc["class_id"] = cls.class_id;
    jc["views"] = std::move(views);
    classes.push_back(std::move(jc));
  }
  manifest["classes"] = std::move(classes);
  detail::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

/// Loads and fully validates an MEB v1 directory.
inline TemplateBank load_bank(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::is_regular_file(manifest_path)) {
    format_fail(FormatErrc::unreadable, "no manifest.json in " + dir.string());
  }
  Json manifest;
  try {
    manifest = Json::parse(detail::read_text(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    format_fail(FormatErrc::bad_manifest, manifest_path.string() + ": " + e.what());
  }
  const std::string where = manifest_path.string();
  if (!manifest.is_object() || !manifest.contains("format_version")) {
    format_fail(FormatErrc::bad_manifest, where + ": missing format_version");
  }
  if (!manifest["format_version"].is_number_integer() ||
      manifest["format_version"].get<int>() != kBankFormatVersion) {
    format_fail(FormatErrc::unknown_version,
                where + ": unsupported format_version " + manifest["format_version"].dump());
  }

  TemplateBank bank;
  try {
    bank.dim = detail::field<std::size_t>(manifest, "dim", where);
    bank.pooled = detail::field<bool>(manifest, "pooled", where);
    if (manifest.contains("metric_hint")) bank.metric_hint = manifest["metric_hint"].get<std::string>();
    if (bank.pooled) bank.pooled_exponent = detail::field<double>(manifest, "pooled_exponent", where);
  } catch (const FormatError& e) {
    format_fail(FormatErrc::bad_manifest, e.what());
  }
  if (bank.dim == 0) format_fail(FormatErrc::bad_manifest, where + ": dim must be positive");
  if (bank.pooled && !(bank.pooled_exponent > 0)) {
    format_fail(FormatErrc::bad_manifest, where + ": pooled_exponent must be positive");
  }
  if (!manifest.contains("classes") || !manifest["classes"].is_array()) {
    format_fail(FormatErrc::bad_manifest, where + ": classes must be an array");
  }

  for (const auto& jc : manifest["classes"]) {
    TemplateClass cls;
    cls.class_id = detail::field<std::string>(jc, "class_id", where);
    if (!jc.contains("views") || !jc["views"].is_array()) {
      format_fail(FormatErrc::bad_manifest, where + ": class '" + cls.class_id + "' has no views array");
    }
    std::size_t v = 0;
    for (const auto& jv : jc["views"]) {
      const std::string vw = "class '" + cls.class_id + "' view " + std::to_string(v++);
      TemplateView view;
      view.cls = detail::read_blob(dir, detail::field<std::string>(jv, "cls", vw), bank.dim, vw + " cls");
      const auto patch_ref = detail::field<std::string>(jv, "patch", vw);
      if (jv.contains("patch_tokens")) {
        if (bank.pooled) {
          format_fail(FormatErrc::invalid_bank, vw + ": raw patch tokens in a pooled bank");
        }
        const auto rows = detail::field<std::size_t>(jv, "patch_tokens", vw);
        if (rows == 0) format_fail(FormatErrc::bad_manifest, vw + ": patch_tokens must be >= 1");
        PatchTokens tok{rows, bank.dim, detail::read_blob(dir, patch_ref, rows * bank.dim, vw + " patch")};
        view.patch = std::move(tok);
      } else {
        if (!bank.pooled) {
          format_fail(FormatErrc::invalid_bank, vw + ": pooled descriptor in a raw bank");
        }
        view.patch = detail::read_blob(dir, patch_ref, bank.dim, vw + " patch");
      }
      cls.views.push_back(std::move(view));
    }
    bank.classes.push_back(std::move(cls));
  }

  if (const auto violations = validate_bank(bank); !violations.empty()) {
    format_fail(FormatErrc::invalid_bank, where + ": " + violations.front().message);
  }
  return bank;
}

struct PoolReport {
  std::size_t views = 0;
  std::size_t raw_patch_bytes = 0;
  std::size_t pooled_patch_bytes = 0;
};

/// GeM-pools every view's tokens in memory.
inline TemplateBank pool_bank(const TemplateBank& raw, double e, PoolReport* report = nullptr) {
  if (raw.pooled) fail(ErrorKind::validation, "bank is already pooled");
  if (!(std::isfinite(e) && e > 0)) fail(ErrorKind::validation, "pooling exponent must be positive");
  TemplateBank out = raw;
  out.pooled = true;
  out.pooled_exponent = e;
  PoolReport r;
  for (auto& cls : out.classes) {
    for (auto& view : cls.views) {
      const auto& tok = std::get<PatchTokens>(view.patch);
      r.raw_patch_bytes += tok.values.size() * sizeof(float);
      view.patch = gem_pool(tok, e);
      r.pooled_patch_bytes += out.dim * sizeof(float);
      ++r.views;
    }
  }
  if (report) *report = r;
  return out;
}

/// Loads a raw archive, pools it and writes the pooled archive.
inline PoolReport pool_bank(const fs::path& raw_dir, double e, const fs::path& out_dir) {
  PoolReport report;
  const TemplateBank pooled = pool_bank(load_bank(raw_dir), e, &report);
  save_bank(pooled, out_dir);
  return report;
}

struct ClassFootprint {
  std::string class_id;
  std::size_t views = 0;
  std::size_t cls_bytes = 0;
  std::size_t patch_bytes = 0;
};

/// Storage held per class: f32 payload bytes of class embeddings and patch
/// representations.
inline std::vector<ClassFootprint> bank_footprint(const TemplateBank& bank) {
  std::vector<ClassFootprint> out;
  for (const auto& cls : bank.classes) {
    ClassFootprint f{cls.class_id, cls.views.size(), 0, 0};
    for (const auto& view : cls.views) {
      f.cls_bytes += view.cls.size() * sizeof(float);
      if (const auto* desc = std::get_if<Embedding>(&view.patch)) {
        f.patch_bytes += desc->size() * sizeof(float);
      } else {
        f.patch_bytes += std::get<PatchTokens>(view.patch).values.size() * sizeof(float);
      }
    }
    out.push_back(f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Proposals (JSON lines)

namespace detail {

inline std::vector<float> vector_from_json(const Json& j, std::size_t expected,
                                           const fs::path& base, const std::string& where) {
  if (!j.is_object()) format_fail(FormatErrc::bad_record, where + ": expected {\"base64\"} or {\"blob\"}");
  std::vector<float> xs;
  if (j.contains("base64")) {
    const std::string bytes = base64_decode(field<std::string>(j, "base64", where));
    if (bytes.size() % 4 != 0) format_fail(FormatErrc::length_mismatch, where + ": payload not f32-aligned");
    xs = bytes_to_floats(bytes);
    if (expected != 0 && xs.size() != expected) {
      format_fail(FormatErrc::length_mismatch, where + ": " + std::to_string(xs.size()) +
                                                   " floats, expected " + std::to_string(expected));
    }
    require_finite(xs, where);
  } else if (j.contains("blob")) {
    const auto ref = field<std::string>(j, "blob", where);
    if (expected == 0) {
      const std::string bytes = read_text(base / ref);
      if (bytes.size() % 4 != 0) format_fail(FormatErrc::length_mismatch, where + ": blob not f32-aligned");
      xs = bytes_to_floats(bytes);
      require_finite(xs, where);
    } else {
      xs = read_blob(base, ref, expected, where);
    }
  } else {
    format_fail(FormatErrc::bad_record, where + ": expected {\"base64\"} or {\"blob\"}");
  }
  if (xs.empty()) format_fail(FormatErrc::length_mismatch, where + ": empty vector");
  return xs;
}

inline Json vector_to_json(std::span<const float> xs) {
  Json j;
  j["base64"] = base64_encode(floats_to_bytes(xs));
  return j;
}

}  // namespace detail

inline Proposal parse_proposal(const Json& j, const fs::path& base, const std::string& where) {
  Proposal p;
  p.image_id = detail::field<std::string>(j, "image_id", where);
  p.proposal_id = detail::field<std::string>(j, "proposal_id", where);
  if (!j.contains("bbox")) format_fail(FormatErrc::bad_record, where + ": missing field 'bbox'");
  p.bbox = detail::bbox_from_json(j["bbox"], where);
  p.objectness = detail::field<double>(j, "objectness", where);
  if (!(p.objectness >= 0 && p.objectness <= 1)) {
    format_fail(FormatErrc::bad_record, where + ": objectness outside [0, 1]");
  }
  if (j.contains("mask") && !j["mask"].is_null()) p.mask = detail::mask_from_json(j["mask"], where);
  if (!j.contains("cls") || !j.contains("patch")) {
    format_fail(FormatErrc::bad_record, where + ": missing 'cls' or 'patch'");
  }
  p.cls = detail::vector_from_json(j["cls"], 0, base, where + " cls");
  const std::size_t d = p.cls.size();
  const auto& jp = j["patch"];
  if (jp.is_object() && jp.contains("rows")) {
    const auto rows = detail::field<std::size_t>(jp, "rows", where + " patch");
    if (rows == 0) format_fail(FormatErrc::bad_record, where + ": patch rows must be >= 1");
    p.patch = PatchTokens{rows, d, detail::vector_from_json(jp, rows * d, base, where + " patch")};
  } else {
    p.patch = detail::vector_from_json(jp, d, base, where + " patch");
  }
  return p;
}

inline Json proposal_to_json(const Proposal& p) {
  Json j;
  j["image_id"] = p.image_id;
  j["proposal_id"] = p.proposal_id;
  j["bbox"] = detail::bbox_to_json(p.bbox);
  j["objectness"] = p.objectness;
  if (p.mask) j["mask"] = detail::mask_to_json(*p.mask);
  j["cls"] = detail::vector_to_json(p.cls);
  if (const auto* desc = std::get_if<Embedding>(&p.patch)) {
    j["patch"] = detail::vector_to_json(*desc);
  } else {
    const auto& tok = std::get<PatchTokens>(p.patch);
    Json jp = detail::vector_to_json(tok.values);
    jp["rows"] = tok.rows;
    j["patch"] = std::move(jp);
  }
  return j;
}

/// Reads a proposal JSONL file. Blank lines are skipped; errors name the
/// 1-based line. With `expected_dim` set every embedding must match it.
inline std::vector<Proposal> load_proposals(const fs::path& path,
                                            std::optional<std::size_t> expected_dim = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) format_fail(FormatErrc::unreadable, "cannot open " + path.string());
  const fs::path base = path.parent_path();
  std::vector<Proposal> out;
  std::set<std::pair<std::string, std::string>> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      format_fail(FormatErrc::bad_record, where + ": malformed JSON: " + e.what());
    }
    Proposal p = parse_proposal(j, base, where);
    if (expected_dim && p.cls.size() != *expected_dim) {
      format_fail(FormatErrc::length_mismatch, where + ": embedding d=" + std::to_string(p.cls.size()) +
                                                   ", bank d=" + std::to_string(*expected_dim));
    }
    if (!seen.emplace(p.image_id, p.proposal_id).second) {
      format_fail(FormatErrc::bad_record, where + ": duplicate proposal '" + p.proposal_id +
                                              "' in image '" + p.image_id + "'");
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline void save_proposals(std::span<const Proposal> proposals, const fs::path& path) {
  std::string text;
  for (const auto& p : proposals) text += proposal_to_json(p).dump() + "\n";
  detail::write_text(path, text);
}

// ---------------------------------------------------------------------------
// Scoring configuration

inline Json config_to_json(const ScoringConfig& cfg) {
  Json j;
  j["e"] = cfg.e;
  j["alpha"] = cfg.alpha;
  j["beta"] = cfg.beta;
  j["tau"] = cfg.tau;
  j["gamma"] = cfg.gamma;
  j["top_k"] = cfg.top_k;
  j["metric"] = std::string(to_string(cfg.metric));
  j["score_floor"] = cfg.score_floor ? Json(*cfg.score_floor) : Json(nullptr);
  j["use_prior"] = cfg.use_prior;
  return j;
}

/// Overrides the fields present in `j` on top of `base`; unknown keys are errors.
inline ScoringConfig merge_config(ScoringConfig base, const Json& j) {
  if (!j.is_object()) fail(ErrorKind::validation, "config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "e") base.e = value.get<double>();
      else if (key == "alpha") base.alpha = value.get<double>();
      else if (key == "beta") base.beta = value.get<double>();
      else if (key == "tau") base.tau = value.get<double>();
      else if (key == "gamma") base.gamma = value.get<double>();
      else if (key == "top_k") base.top_k = value.get<int>();
      else if (key == "metric") base.metric = parse_metric(value.get<std::string>());
      else if (key == "score_floor") {
        base.score_floor = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
      } else if (key == "use_prior") base.use_prior = value.get<bool>();
      else fail(ErrorKind::validation, "unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::validation, std::string("config: ") + e.what());
  }
  validate_config(base);
  return base;
}

inline ScoringConfig load_config(const fs::path& path, ScoringConfig base = default_config()) {
  try {
    return merge_config(base, Json::parse(detail::read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::validation, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Predictions

/// Export order: image_id ascending, score descending, then proposal and class.
inline void sort_for_export(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.proposal_id, a.class_id) < std::tie(b.proposal_id, b.class_id);
  });
}

inline std::string predictions_to_string(std::vector<Detection> dets,
                                         const std::optional<ScoringConfig>& cfg = {}) {
  sort_for_export(dets);
  Json j;
  j["format"] = "viewmatch-predictions";
  j["version"] = kPredictionFormatVersion;
  j["config"] = cfg ? config_to_json(*cfg) : Json(nullptr);
  Json arr = Json::array();
  for (const auto& d : dets) {
    if (!std::isfinite(d.score)) fail(ErrorKind::data, "non-finite detection score");
    Json jd;
    jd["image_id"] = d.image_id;
    jd["proposal_id"] = d.proposal_id;
    jd["class_id"] = d.class_id;
    jd["bbox"] = detail::bbox_to_json(d.bbox);
    jd["score"] = d.score;
    if (d.mask) jd["mask"] = detail::mask_to_json(*d.mask);
    arr.push_back(std::move(jd));
  }
  j["predictions"] = std::move(arr);
  return j.dump(1) + "\n";
}

inline void save_predictions(std::vector<Detection> dets, const fs::path& path,
                             const std::optional<ScoringConfig>& cfg = {}) {
  detail::write_text(path, predictions_to_string(std::move(dets), cfg));
}

struct PredictionFile {
  std::optional<ScoringConfig> config;
  std::vector<Detection> detections;
};

/// Accepts the object form written by save_predictions or a bare array of
/// detection records.
inline PredictionFile load_prediction_file(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(detail::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    format_fail(FormatErrc::bad_record, path.string() + ": " + e.what());
  }
  PredictionFile out;
  const Json* arr = &j;
  if (j.is_object()) {
    if (j.contains("config") && !j["config"].is_null()) out.config = merge_config(default_config(), j["config"]);
    if (!j.contains("predictions")) format_fail(FormatErrc::bad_record, path.string() + ": no 'predictions'");
    arr = &j["predictions"];
  }
  if (!arr->is_array()) format_fail(FormatErrc::bad_record, path.string() + ": predictions must be an array");
  std::size_t i = 0;
  for (const auto& jd : *arr) {
    const std::string where = path.string() + " prediction " + std::to_string(i++);
    Detection d;
    d.image_id = detail::field<std::string>(jd, "image_id", where);
    d.class_id = detail::field<std::string>(jd, "class_id", where);
    if (jd.contains("proposal_id")) d.proposal_id = detail::field<std::string>(jd, "proposal_id", where);
    if (!jd.contains("bbox")) format_fail(FormatErrc::bad_record, where + ": missing field 'bbox'");
    d.bbox = detail::bbox_from_json(jd["bbox"], where);
    d.score = detail::field<double>(jd, "score", where);
    if (!std::isfinite(d.score)) format_fail(FormatErrc::non_finite, where + ": score");
    if (jd.contains("mask") && !jd["mask"].is_null()) d.mask = detail::mask_from_json(jd["mask"], where);
    out.detections.push_back(std::move(d));
  }
  return out;
}

inline std::vector<Detection> load_predictions(const fs::path& path) {
  return load_prediction_file(path).detections;
}

// ---------------------------------------------------------------------------
// Ground truth

inline std::string ground_truth_to_string(const GroundTruthSet& gt) {
  Json j;
  j["images"] = gt.image_ids;
  j["classes"] = gt.class_ids;
  Json arr = Json::array();
  for (const auto& a : gt.annotations) {
    Json ja;
    ja["image_id"] = a.image_id;
    ja["class_id"] = a.class_id;
    ja["bbox"] = detail::bbox_to_json(a.bbox);
    if (a.mask) ja["mask"] = detail::mask_to_json(*a.mask);
    if (a.ignore) ja["ignore"] = true;
    arr.push_back(std::move(ja));
  }
  j["annotations"] = std::move(arr);
  return j.dump(1) + "\n";
}

inline void save_ground_truth(const GroundTruthSet& gt, const fs::path& path) {
  detail::write_text(path, ground_truth_to_string(gt));
}

/// Object form {images, classes, annotations}, or a bare annotation array in
/// which case images and classes are collected in first-seen order.
inline GroundTruthSet load_ground_truth(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(detail::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    format_fail(FormatErrc::bad_record, path.string() + ": " + e.what());
  }
  GroundTruthSet gt;
  const Json* arr = &j;
  if (j.is_object()) {
    gt.image_ids = detail::field<std::vector<std::string>>(j, "images", path.string());
    gt.class_ids = detail::field<std::vector<std::string>>(j, "classes", path.string());
    if (!j.contains("annotations")) format_fail(FormatErrc::bad_record, path.string() + ": no 'annotations'");
    arr = &j["annotations"];
  }
  if (!arr->is_array()) format_fail(FormatErrc::bad_record, path.string() + ": annotations must be an array");
  const bool infer = !j.is_object();
  std::size_t i = 0;
  for (const auto& ja : *arr) {
    const std::string where = path.string() + " annotation " + std::to_string(i++);
    GroundTruth a;
    a.image_id = detail::field<std::string>(ja, "image_id", where);
    a.class_id = detail::field<std::string>(ja, "class_id", where);
    if (!ja.contains("bbox")) format_fail(FormatErrc::bad_record, where + ": missing field 'bbox'");
    a.bbox = detail::bbox_from_json(ja["bbox"], where);
    if (ja.contains("mask") && !ja["mask"].is_null()) a.mask = detail::mask_from_json(ja["mask"], where);
    if (ja.contains("ignore")) a.ignore = detail::field<bool>(ja, "ignore", where);
    if (infer) {
      if (std::find(gt.image_ids.begin(), gt.image_ids.end(), a.image_id) == gt.image_ids.end()) {
        gt.image_ids.push_back(a.image_id);
      }
      if (std::find(gt.class_ids.begin(), gt.class_ids.end(), a.class_id) == gt.class_ids.end()) {
        gt.class_ids.push_back(a.class_id);
      }
    }
    gt.annotations.push_back(std::move(a));
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Evaluation reports

inline Json report_to_json(const EvalReport& r) {
  Json j;
  j["mode"] = std::string(to_string(r.mode));
  j["iou_thresholds"] = iou_thresholds();
  j["map"] = r.map;
  j["map_per_iou"] = r.map_per_iou;
  Json classes = Json::array();
  for (std::size_t c = 0; c < r.class_ids.size(); ++c) {
    Json jc;
    jc["class_id"] = r.class_ids[c];
    jc["gt_count"] = r.gt_counts[c];
    jc["ap"] = r.ap_per_class[c] ? Json(*r.ap_per_class[c]) : Json(nullptr);
    jc["ap_per_iou"] = r.ap_per_class_per_iou[c] ? Json(*r.ap_per_class_per_iou[c]) : Json(nullptr);
    classes.push_back(std::move(jc));
  }
  j["classes"] = std::move(classes);
  return j;
}

inline void save_report(const EvalReport& r, const fs::path& path) {
  detail::write_text(path, report_to_json(r).dump(2) + "\n");
}

}  // namespace viewmatch::io
