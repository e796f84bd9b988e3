#include "nullprobe/cli.hpp"

#include "nullprobe/errors.hpp"
#include "nullprobe/rng.hpp"
#include "nullprobe/scm_json.hpp"
#include "nullprobe/scmlab.hpp"
#include "nullprobe/trace_model.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace nullprobe {

namespace fs = std::filesystem;
using nlohmann::json;

// Defined in cli_report.cpp.
void write_summary(const json& report, const fs::path& directory, std::vector<fs::path>& written);

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void make_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

// Flag values that override the config document, applied before parsing so
// that a single code path validates everything.
struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> task;
  std::optional<std::size_t> n_samples;
  std::optional<double> plant_alpha;
  std::optional<std::size_t> plant_layer;
  std::optional<std::string> traces;
  std::optional<std::size_t> folds;
  std::optional<std::string> metric;
  std::optional<std::string> layers;
  std::optional<std::string> family;
  std::optional<std::size_t> B;
  std::optional<std::size_t> chance_B;
  std::optional<double> alpha;
  std::optional<std::string> correction;
  std::optional<std::size_t> threads;
};

RunConfig resolve_config(const Overrides& o) {
  json j = o.config_path.empty() ? json::object() : read_json_file(o.config_path);
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  auto section = [&](const char* name) -> json& {
    if (!j.contains(name)) j[name] = json::object();
    return j[name];
  };
  if (o.seed) j["seed"] = *o.seed;
  if (o.threads) j["threads"] = *o.threads;
  if (o.task) section("task")["kind"] = *o.task;
  if (o.n_samples) section("traces")["n_samples"] = *o.n_samples;
  if (o.traces) section("traces")["dir"] = *o.traces;
  if (o.plant_alpha) section("plant")["alpha"] = *o.plant_alpha;
  if (o.plant_layer) section("plant")["layer"] = *o.plant_layer;
  if (o.folds) section("probe")["folds"] = *o.folds;
  if (o.metric) section("probe")["metric"] = *o.metric;
  if (o.layers) j["layers"] = *o.layers;
  if (o.family) section("test")["family"] = *o.family;
  if (o.B) section("test")["B"] = *o.B;
  if (o.chance_B) section("test")["chance_B"] = *o.chance_B;
  if (o.alpha) section("test")["alpha"] = *o.alpha;
  if (o.correction) section("test")["correction"] = *o.correction;
  RunConfig c = run_config_from_json(j);
  validate(c);
  return c;
}

struct Prepared {
  Experiment experiment;
  ProbeSpec probe;
  MetricKind metric = MetricKind::kAccuracy;
  std::vector<std::size_t> layers;
};

Prepared prepare(const RunConfig& c) {
  Prepared p;
  if (c.traces_dir) {
    p.experiment = Experiment::from_traces(read_traces(*c.traces_dir));
  } else {
    ToyModel model = init_model(c.model, c.model_seed);
    if (c.plant.alpha > 0.0) model = plant_signal(model, SyntheticTask(c.task), c.plant);
    p.experiment = Experiment::from_model(std::move(model), TraceRecipe{c.task, c.n_samples, c.input_seed});
  }
  const TraceSet& t = p.experiment.traces;
  const bool classification = t.label_spec.is_classification();
  p.probe = c.probe;
  p.probe.kind = c.probe_kind == "auto" ? (classification ? ProbeKind::kLogistic : ProbeKind::kRidge)
                                        : probe_kind_from_string(c.probe_kind);
  p.metric = c.metric == "auto" ? (classification ? MetricKind::kAccuracy : MetricKind::kR2)
                                : metric_kind_from_string(c.metric);
  if (p.probe.kind == ProbeKind::kLogistic && !classification) {
    throw ValidationError("config: probe.kind: logistic probes need class labels");
  }
  if (p.probe.kind == ProbeKind::kRidge && classification) {
    throw ValidationError("config: probe.kind: ridge probes need real-valued labels");
  }
  if (classification != (p.metric == MetricKind::kAccuracy)) {
    throw ValidationError("config: probe.metric: accuracy goes with class labels, r2/pearson with real labels");
  }
  if (c.folds > t.n_samples) throw ValidationError("config: probe.folds: exceeds the number of trace rows");
  p.layers = c.layers;
  if (p.layers.empty()) {
    for (std::size_t l = 0; l < t.n_layers; ++l) p.layers.push_back(l);
  }
  for (auto l : p.layers) {
    if (l >= t.n_layers) throw ValidationError("config: layers: layer " + std::to_string(l) + " not in the traces");
  }
  return p;
}

json cv_to_json(const CvResult& cv) {
  return {{"k", cv.k},
          {"metric", to_string(cv.metric_kind)},
          {"mean", cv.mean},
          {"std", cv.std},
          {"per_fold", cv.per_fold_metric}};
}

void emit_paths(std::ostream& out, const std::vector<fs::path>& paths) {
  for (const auto& p : paths) out << p.string() << "\n";
}

int cmd_gen(const Overrides& o, const fs::path& out_dir, std::ostream& out) {
  const RunConfig c = resolve_config(o);
  if (c.traces_dir) throw ValidationError("config: traces.dir: gen writes traces, it does not read them");
  const Prepared p = prepare(c);
  const fs::path dir = out_dir / "traces";
  write_traces(p.experiment.traces, dir);
  emit_paths(out, {dir / "manifest.json"});
  return kExitOk;
}

int cmd_probe(const Overrides& o, const fs::path& out_dir, bool as_json, std::ostream& out) {
  const RunConfig c = resolve_config(o);
  const Prepared p = prepare(c);
  json report;
  report["config"] = run_config_to_json(c);
  report["probe"] = to_string(p.probe.kind);
  report["layers"] = json::array();
  std::string csv = "layer,metric,folds,mean,std\n";
  for (auto l : p.layers) {
    const CvResult cv = kfold_cv(p.experiment.traces, l, p.probe, c.folds, c.cv_seed, p.metric);
    json row = cv_to_json(cv);
    row["layer"] = l;
    report["layers"].push_back(row);
    csv += std::to_string(l) + "," + to_string(cv.metric_kind) + "," + std::to_string(cv.k) + "," + number(cv.mean) +
           "," + number(cv.std) + "\n";
  }
  make_directory(out_dir);
  write_text(out_dir / "probe.json", report.dump(2) + "\n");
  write_text(out_dir / "probe.csv", csv);
  if (as_json) {
    out << report.dump(2) << "\n";
  } else {
    emit_paths(out, {out_dir / "probe.json", out_dir / "probe.csv"});
  }
  return kExitOk;
}

int cmd_test(const Overrides& o, const fs::path& out_dir, bool as_json, std::ostream& out) {
  const RunConfig c = resolve_config(o);
  const NullFamily family = family_from_tag(c.family);
  if (c.traces_dir && std::holds_alternative<WeightRandomization>(family)) {
    throw ValidationError("config: test.family: weight randomization needs a generated model, not stored traces");
  }
  const Prepared p = prepare(c);
  const TestStatistic statistic = cv_probe_statistic(p.probe, c.folds, p.metric);

  std::vector<CvResult> cvs;
  for (auto l : p.layers) cvs.push_back(kfold_cv(p.experiment.traces, l, p.probe, c.folds, c.cv_seed, p.metric));

  TestOptions chance_options{c.chance_B, derive_seed(c.master_seed, 1), c.cv_seed, c.threads};
  TestOptions null_options{c.B, derive_seed(c.master_seed, 2), c.cv_seed, c.threads};
  const auto chance = run_test(p.experiment, statistic, LabelPermutation{}, p.layers, chance_options);
  const auto nulls = run_test(p.experiment, statistic, family, p.layers, null_options);

  std::vector<double> chance_p;
  std::vector<double> null_p;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    chance_p.push_back(chance[i].p_hat);
    null_p.push_back(nulls[i].p_hat);
  }
  const CorrectionResult chance_corr = correct(chance_p, c.alpha, c.correction);
  const CorrectionResult null_corr = correct(null_p, c.alpha, c.correction);

  json report;
  report["schema"] = "nullprobe.layer_sweep/1";
  report["config"] = run_config_to_json(c);
  report["statistic"] = statistic.name;
  report["family"] = family_tag(family);
  report["alpha"] = c.alpha;
  report["correction"] = to_string(c.correction);
  report["provenance"] = p.experiment.traces.provenance;
  report["layers"] = json::array();
  auto z_or_null = [](const TestReport& r) { return r.z_effect ? json(*r.z_effect) : json(nullptr); };
  std::string sweep =
      "layer,cv_mean,cv_std,chance_null_mean,chance_p,chance_p_adjusted,chance_reject,chance_z,"
      "null_mean,null_sd,null_p,null_p_adjusted,null_reject,null_z\n";
  std::string hist = "family,layer,replicate,t_null\n";
  auto z_text = [](const TestReport& r) { return r.z_effect ? number(*r.z_effect) : std::string("NA"); };
  std::size_t chance_rejections = 0;
  std::size_t null_rejections = 0;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    json row;
    row["layer"] = p.layers[i];
    row["cv"] = cv_to_json(cvs[i]);
    row["chance"] = to_json(chance[i]);
    row["null"] = to_json(nulls[i]);
    row["chance_p_adjusted"] = chance_corr.adjusted[i];
    row["chance_reject"] = static_cast<bool>(chance_corr.reject[i]);
    row["null_p_adjusted"] = null_corr.adjusted[i];
    row["null_reject"] = static_cast<bool>(null_corr.reject[i]);
    row["z_chance"] = z_or_null(chance[i]);
    row["z_null"] = z_or_null(nulls[i]);
    report["layers"].push_back(row);
    chance_rejections += chance_corr.reject[i] ? 1 : 0;
    null_rejections += null_corr.reject[i] ? 1 : 0;

    sweep += std::to_string(p.layers[i]) + "," + number(cvs[i].mean) + "," + number(cvs[i].std) + "," +
             number(chance[i].null_mean) + "," + number(chance[i].p_hat) + "," + number(chance_corr.adjusted[i]) +
             "," + (chance_corr.reject[i] ? "1" : "0") + "," + z_text(chance[i]) + "," + number(nulls[i].null_mean) +
             "," + number(nulls[i].null_sd) + "," + number(nulls[i].p_hat) + "," + number(null_corr.adjusted[i]) +
             "," + (null_corr.reject[i] ? "1" : "0") + "," + z_text(nulls[i]) + "\n";
    for (std::size_t b = 0; b < chance[i].t_null.size(); ++b) {
      hist += "label_permutation," + std::to_string(p.layers[i]) + "," + std::to_string(b + 1) + "," +
              number(chance[i].t_null[b]) + "\n";
    }
    for (std::size_t b = 0; b < nulls[i].t_null.size(); ++b) {
      hist += nulls[i].family + "," + std::to_string(p.layers[i]) + "," + std::to_string(b + 1) + "," +
              number(nulls[i].t_null[b]) + "\n";
    }
  }
  report["corrections"] = {{"chance", to_json(chance_corr)}, {"null", to_json(null_corr)}};
  report["summary"] = {{"n_layers", p.layers.size()},
                       {"chance_rejections", chance_rejections},
                       {"null_rejections", null_rejections}};
  validate_sweep_report(report);

  make_directory(out_dir);
  write_text(out_dir / "report.json", report.dump(2) + "\n");
  write_text(out_dir / "sweep.csv", sweep);
  write_text(out_dir / "null_histograms.csv", hist);
  if (as_json) {
    out << report.dump(2) << "\n";
  } else {
    emit_paths(out, {out_dir / "report.json", out_dir / "sweep.csv", out_dir / "null_histograms.csv"});
  }
  return kExitOk;
}

int cmd_scm(const std::string& example, const std::string& config_path, double epsilon, bool with_withheld,
            const fs::path& out_dir, bool as_json, std::ostream& out) {
  if (example.empty() == config_path.empty()) {
    throw ValidationError("scm: give exactly one of --example or --config");
  }
  if (!(epsilon >= 0.0)) throw ValidationError("scm: --epsilon must be >= 0");
  ScmModel scm;
  TaskSpec task;
  std::optional<CausalQuery> withheld;
  if (!example.empty()) {
    std::string name = example;
    std::replace(name.begin(), name.end(), '-', '_');
    CanonicalExample ex = canonical_example(name);
    scm = std::move(ex.scm);
    task = std::move(ex.task);
    withheld = ex.withheld;
  } else {
    const json j = read_json_file(config_path);
    if (!j.is_object()) throw ValidationError("scm config: expected an object");
    for (const auto& [key, value] : j.items()) {
      if (key != "scm" && key != "task" && key != "withheld") throw ValidationError(key + ": unknown key");
    }
    if (!j.contains("scm")) throw ValidationError("scm: missing");
    if (!j.contains("task")) throw ValidationError("task: missing");
    scm = scm_from_json(j.at("scm"), "scm");
    task = task_from_json(j.at("task"), scm, "task");
    if (j.contains("withheld")) withheld = query_from_json(j.at("withheld"), scm, "withheld");
  }
  if (with_withheld) {
    if (!withheld) throw ValidationError("scm: --with-withheld: this task has no withheld query");
    // Enriched mu: the withheld query joins with equal weight.
    const double n = static_cast<double>(task.mu.size() + 1);
    for (auto& wq : task.mu) wq.weight = wq.weight * (n - 1.0) / n;
    task.mu.push_back({*withheld, 1.0 / n});
    double total = 0.0;
    for (const auto& wq : task.mu) total += wq.weight;
    for (auto& wq : task.mu) wq.weight /= total;
  }
  const IdentifiabilityResult result = identifiability_check(task, scm, epsilon);
  json report = identifiability_to_json(task, scm, result, epsilon);
  if (withheld) report["withheld"] = query_to_json(*withheld, scm);
  report["withheld_included"] = with_withheld;
  if (as_json) {
    out << report.dump(2) << "\n";
    return kExitOk;
  }
  make_directory(out_dir);
  write_text(out_dir / "scm_report.json", report.dump(2) + "\n");
  emit_paths(out, {out_dir / "scm_report.json"});
  return kExitOk;
}

int cmd_report(const fs::path& run_dir, const std::optional<fs::path>& out_dir, std::ostream& out) {
  if (!fs::is_directory(run_dir)) throw IoError("run directory " + run_dir.string() + " does not exist");
  const json report = read_json_file(run_dir / "report.json");
  validate_sweep_report(report);
  const fs::path dir = out_dir.value_or(run_dir);
  make_directory(dir);
  std::vector<fs::path> written;
  write_summary(report, dir, written);
  emit_paths(out, written);
  return kExitOk;
}

void add_run_options(CLI::App* cmd, Overrides& o, bool analysis) {
  cmd->add_option("--config", o.config_path, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed; unset sub-seeds derive from it");
  cmd->add_option("--task", o.task, "token_sentiment | token_tag | token_coords");
  cmd->add_option("--n-samples", o.n_samples, "number of input sequences");
  cmd->add_option("--plant-alpha", o.plant_alpha, "signal planting strength in [0, 1]");
  cmd->add_option("--plant-layer", o.plant_layer, "representation layer that receives the planted signal");
  if (!analysis) return;
  cmd->add_option("--traces", o.traces, "analyze a stored trace directory");
  cmd->add_option("--folds", o.folds, "cross-validation folds");
  cmd->add_option("--metric", o.metric, "auto | accuracy | r2 | pearson");
  cmd->add_option("--layers", o.layers, "layer range a:b or list a,b,c");
  cmd->add_option("--threads", o.threads, "worker threads for null replicates");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Null-model hypothesis tests for interpretability findings", "nullprobe"};
  app.require_subcommand(1);

  Overrides o;
  std::string out_dir = "run";
  bool as_json = false;

  auto* gen = app.add_subcommand("gen", "generate traces from a toy model and synthetic task");
  add_run_options(gen, o, false);
  gen->add_option("--out", out_dir, "output directory");

  auto* probe = app.add_subcommand("probe", "cross-validated probe accuracy per layer");
  add_run_options(probe, o, true);
  probe->add_option("--out", out_dir, "output directory");
  probe->add_flag("--json", as_json, "print the report JSON instead of paths");

  auto* test = app.add_subcommand("test", "layer sweep against chance and a null family, with corrections");
  add_run_options(test, o, true);
  test->add_option("--family", o.family, "weights:all | weights:blocks_only | weights:embeddings_only | "
                                         "label_permutation | orthogonal_rotation");
  test->add_option("-B,--B", o.B, "null replicates");
  test->add_option("--chance-B", o.chance_B, "label-permutation replicates for the chance baseline");
  test->add_option("--alpha", o.alpha, "significance level");
  test->add_option("--correction", o.correction, "benjamini_hochberg | bonferroni");
  test->add_option("--out", out_dir, "output directory");
  test->add_flag("--json", as_json, "print the report JSON instead of paths");

  std::string example;
  std::string scm_config;
  double epsilon = 1e-12;
  bool with_withheld = false;
  auto* scm = app.add_subcommand("scm", "identifiability check on a finite SCM");
  scm->add_option("--example", example, "overdetermined-or | chain3 | underspecified-probe");
  scm->add_option("--config", scm_config, "JSON file with scm, task and optional withheld query")
      ->check(CLI::ExistingFile);
  scm->add_option("--epsilon", epsilon, "risk tolerance for minimizers");
  scm->add_flag("--with-withheld", with_withheld, "add the withheld query to the query distribution");
  scm->add_option("--out", out_dir, "output directory");
  scm->add_flag("--json", as_json, "print the report JSON instead of writing a file");

  std::string run_dir;
  std::optional<std::string> report_out;
  auto* report = app.add_subcommand("report", "Markdown and CSV summary of a test run");
  report->add_option("--run", run_dir, "directory holding report.json")->required();
  report->add_option("--out", report_out, "output directory (default: the run directory)");

  std::vector<const char*> argv{"nullprobe"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(o, out_dir, out);
    if (probe->parsed()) return cmd_probe(o, out_dir, as_json, out);
    if (test->parsed()) return cmd_test(o, out_dir, as_json, out);
    if (scm->parsed()) return cmd_scm(example, scm_config, epsilon, with_withheld, out_dir, as_json, out);
    if (report->parsed()) {
      return cmd_report(run_dir, report_out ? std::optional<fs::path>(*report_out) : std::nullopt, out);
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const StatisticalError& e) {
    err << "statistical error: " << e.what() << "\n";
    return kExitStatistical;
  }
  err << "error: no subcommand\n";
  return kExitUsage;
}

}  // namespace nullprobe
