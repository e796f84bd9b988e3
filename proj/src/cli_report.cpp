#include "nullprobe/cli.hpp"

#include "nullprobe/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace nullprobe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw ValidationError("report: " + path + ": " + message);
}

const json& field(const json& j, const std::string& path, const char* key) {
  if (!j.is_object()) fail(path, "expected an object");
  if (!j.contains(key)) fail(path + "." + key, "missing");
  return j.at(key);
}

double num(const json& j, const std::string& path, const char* key) {
  const json& v = field(j, path, key);
  if (!v.is_number()) fail(path + "." + key, "expected a number");
  return v.get<double>();
}

bool boolean(const json& j, const std::string& path, const char* key) {
  const json& v = field(j, path, key);
  if (!v.is_boolean()) fail(path + "." + key, "expected a boolean");
  return v.get<bool>();
}

std::string text(const json& j, const std::string& path, const char* key) {
  const json& v = field(j, path, key);
  if (!v.is_string()) fail(path + "." + key, "expected a string");
  return v.get<std::string>();
}

std::size_t count(const json& j, const std::string& path, const char* key) {
  const json& v = field(j, path, key);
  if (!v.is_number_unsigned()) fail(path + "." + key, "expected a non-negative integer");
  return v.get<std::size_t>();
}

void check_test_report(const json& j, const std::string& path) {
  TestReport r;
  try {
    r = test_report_from_json(j);
  } catch (const ValidationError& e) {
    fail(path, e.what());
  }
  if (r.B < 1) fail(path + ".B", "must be >= 1");
  if (r.p_hat != mc_pvalue(r.t_obs, r.t_null)) fail(path + ".p_hat", "inconsistent with t_obs and t_null");
}

void check_correction(const json& j, const std::string& path, std::size_t m) {
  const std::string method = text(j, path, "method");
  if (method != "bonferroni" && method != "benjamini_hochberg") fail(path + ".method", "unknown method");
  num(j, path, "alpha");
  for (const char* key : {"raw", "adjusted", "reject"}) {
    const json& v = field(j, path, key);
    if (!v.is_array() || v.size() != m) fail(path + "." + key, "expected one entry per layer");
  }
}

std::string fixed(double x, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

std::string number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

std::string z_cell(const json& z, int digits) { return z.is_null() ? "NA" : fixed(z.get<double>(), digits); }

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
};

Histogram histogram(const std::vector<double>& values, std::size_t bins) {
  Histogram h;
  h.lo = *std::min_element(values.begin(), values.end());
  h.hi = *std::max_element(values.begin(), values.end());
  if (h.hi == h.lo) {
    h.counts = {values.size()};
    return h;
  }
  h.counts.assign(bins, 0);
  const double width = (h.hi - h.lo) / static_cast<double>(bins);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - h.lo) / width);
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

}  // namespace

void validate_sweep_report(const json& report) {
  if (text(report, "$", "schema") != "nullprobe.layer_sweep/1") fail("$.schema", "unsupported schema");
  if (!field(report, "$", "config").is_object()) fail("$.config", "expected an object");
  if (!field(report, "$", "provenance").is_object()) fail("$.provenance", "expected an object");
  text(report, "$", "statistic");
  text(report, "$", "family");
  const double alpha = num(report, "$", "alpha");
  if (!(alpha > 0.0 && alpha < 1.0)) fail("$.alpha", "must be in (0, 1)");
  const std::string correction = text(report, "$", "correction");
  const json& layers = field(report, "$", "layers");
  if (!layers.is_array() || layers.empty()) fail("$.layers", "expected a non-empty array");
  std::size_t chance_rejections = 0;
  std::size_t null_rejections = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "$.layers[" + std::to_string(i) + "]";
    const json& row = layers[i];
    count(row, p, "layer");
    const json& cv = field(row, p, "cv");
    const std::size_t k = count(cv, p + ".cv", "k");
    num(cv, p + ".cv", "mean");
    num(cv, p + ".cv", "std");
    text(cv, p + ".cv", "metric");
    const json& folds = field(cv, p + ".cv", "per_fold");
    if (!folds.is_array() || folds.size() != k) fail(p + ".cv.per_fold", "expected k entries");
    check_test_report(field(row, p, "chance"), p + ".chance");
    check_test_report(field(row, p, "null"), p + ".null");
    for (const char* key : {"chance_p_adjusted", "null_p_adjusted"}) {
      const double v = num(row, p, key);
      if (!(v > 0.0 && v <= 1.0)) fail(p + "." + key, "must be in (0, 1]");
    }
    chance_rejections += boolean(row, p, "chance_reject") ? 1 : 0;
    null_rejections += boolean(row, p, "null_reject") ? 1 : 0;
    for (const char* key : {"z_chance", "z_null"}) {
      const json& z = field(row, p, key);
      if (!z.is_null() && !z.is_number()) fail(p + "." + key, "expected a number or null");
    }
  }
  const json& corrections = field(report, "$", "corrections");
  check_correction(field(corrections, "$.corrections", "chance"), "$.corrections.chance", layers.size());
  check_correction(field(corrections, "$.corrections", "null"), "$.corrections.null", layers.size());
  if (text(corrections.at("null"), "$.corrections.null", "method") != correction) {
    fail("$.corrections.null.method", "differs from $.correction");
  }
  const json& summary = field(report, "$", "summary");
  if (count(summary, "$.summary", "n_layers") != layers.size()) fail("$.summary.n_layers", "differs from the layer count");
  if (count(summary, "$.summary", "chance_rejections") != chance_rejections) {
    fail("$.summary.chance_rejections", "differs from the per-layer flags");
  }
  if (count(summary, "$.summary", "null_rejections") != null_rejections) {
    fail("$.summary.null_rejections", "differs from the per-layer flags");
  }
}

void write_summary(const json& report, const fs::path& directory, std::vector<fs::path>& written) {
  const auto& layers = report.at("layers");
  const std::string statistic = report.at("statistic").get<std::string>();
  const std::string family = report.at("family").get<std::string>();

  std::string md = "# Layer sweep\n\n";
  md += "Statistic `" + statistic + "` against a label-permutation chance baseline and the `" + family +
        "` null family. Corrections (`" + report.at("correction").get<std::string>() + "`, alpha " +
        number(report.at("alpha").get<double>()) + ") run across the layers of this sweep.\n\n";
  md += "| layer | cv mean | Z vs chance | p adj vs chance | Z vs null | p adj vs null | significant vs null |\n";
  md += "|---:|---:|---:|---:|---:|---:|:---:|\n";
  std::string csv = "layer,cv_mean,z_chance,z_null,chance_p_adjusted,null_p_adjusted,chance_reject,null_reject\n";
  std::string hist_csv = "test,family,layer,bin,bin_lo,bin_hi,count\n";
  std::string hist_md = "\n## Null distributions\n\n";

  for (const auto& row : layers) {
    const auto layer = row.at("layer").get<std::size_t>();
    const double mean = row.at("cv").at("mean").get<double>();
    md += "| " + std::to_string(layer) + " | " + fixed(mean, 4) + " | " + z_cell(row.at("z_chance"), 2) + " | " +
          fixed(row.at("chance_p_adjusted").get<double>(), 4) + " | " + z_cell(row.at("z_null"), 2) + " | " +
          fixed(row.at("null_p_adjusted").get<double>(), 4) + " | " + (row.at("null_reject").get<bool>() ? "yes" : "no") +
          " |\n";
    csv += std::to_string(layer) + "," + number(mean) + "," +
           (row.at("z_chance").is_null() ? "NA" : number(row.at("z_chance").get<double>())) + "," +
           (row.at("z_null").is_null() ? "NA" : number(row.at("z_null").get<double>())) + "," +
           number(row.at("chance_p_adjusted").get<double>()) + "," + number(row.at("null_p_adjusted").get<double>()) +
           "," + (row.at("chance_reject").get<bool>() ? "1" : "0") + "," + (row.at("null_reject").get<bool>() ? "1" : "0") +
           "\n";
    for (const char* which : {"chance", "null"}) {
      const auto& test = row.at(which);
      const auto values = test.at("t_null").get<std::vector<double>>();
      const Histogram h = histogram(values, 10);
      const double width = h.counts.size() > 1 ? (h.hi - h.lo) / static_cast<double>(h.counts.size()) : 0.0;
      hist_md += "- layer " + std::to_string(layer) + ", " + which + " test, " + test.at("family").get<std::string>() + " (B = " +
                 std::to_string(values.size()) + "): observed " + fixed(test.at("t_obs").get<double>(), 4) +
                 ", null range [" + fixed(h.lo, 4) + ", " + fixed(h.hi, 4) + "], counts";
      for (std::size_t b = 0; b < h.counts.size(); ++b) {
        hist_md += " " + std::to_string(h.counts[b]);
        const double lo = h.lo + width * static_cast<double>(b);
        const double hi = b + 1 == h.counts.size() ? h.hi : lo + width;
        hist_csv += std::string(which) + "," + test.at("family").get<std::string>() + "," + std::to_string(layer) + "," + std::to_string(b) + "," +
                    number(lo) + "," + number(hi) + "," + std::to_string(h.counts[b]) + "\n";
      }
      hist_md += "\n";
    }
  }
  const auto& summary = report.at("summary");
  md += "\nSignificant layers: " + std::to_string(summary.at("chance_rejections").get<std::size_t>()) + " of " +
        std::to_string(layers.size()) + " against chance, " +
        std::to_string(summary.at("null_rejections").get<std::size_t>()) + " of " + std::to_string(layers.size()) +
        " against the null family.\n";
  md += hist_md;

  for (const auto& [name, content] : {std::pair<const char*, const std::string&>{"summary.md", md},
                                      {"summary.csv", csv},
                                      {"histograms.csv", hist_csv}}) {
    write_file(directory / name, content);
    written.push_back(directory / name);
  }
}

}  // namespace nullprobe
