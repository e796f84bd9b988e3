#include "nullprobe/scm_json.hpp"

#include "nullprobe/errors.hpp"

#include <cmath>
#include <set>

namespace nullprobe {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw ValidationError(path + ": " + message);
}

void allow_keys(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
  if (!j.is_object()) fail(path, "expected an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) fail(path + "." + key, "unknown key");
  }
}

const json& require(const json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) fail(path + "." + key, "missing");
  return j.at(key);
}

std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

int get_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<int>();
}

double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

const json& get_array(const json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array");
  return j;
}

std::string at(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

std::size_t variable_index(const ScmModel& scm, const json& j, const std::string& path) {
  const std::string name = get_string(j, path);
  for (std::size_t i = 0; i < scm.variables.size(); ++i) {
    if (scm.variables[i].name == name) return i;
  }
  fail(path, "unknown variable '" + name + "'");
}

std::vector<std::size_t> variable_list(const ScmModel& scm, const json& j, const std::string& path) {
  std::vector<std::size_t> out;
  const auto& arr = get_array(j, path);
  for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(variable_index(scm, arr[i], at(path, i)));
  return out;
}

int domain_value(const ScmModel& scm, std::size_t v, const json& j, const std::string& path) {
  const int value = get_int(j, path);
  if (value < 0 || value >= scm.variables[v].domain) {
    fail(path, "value " + std::to_string(value) + " outside the domain of " + scm.variables[v].name);
  }
  return value;
}

std::vector<std::string> names_of(const ScmModel& scm, const std::vector<std::size_t>& vs) {
  std::vector<std::string> out;
  for (auto v : vs) out.push_back(scm.variables[v].name);
  return out;
}

Surrogate surrogate_from_json(const json& j, const ScmModel& scm, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
  const std::string kind = get_string(require(j, path, "kind"), path + ".kind");
  if (kind == "sub_circuit") {
    allow_keys(j, path, {"kind", "name", "edges", "fill"});
    std::vector<Edge> kept;
    const auto& arr = get_array(require(j, path, "edges"), path + ".edges");
    const auto all = edges(scm);
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string ep = at(path + ".edges", i);
      if (!arr[i].is_array() || arr[i].size() != 2) fail(ep, "expected [parent, child]");
      const Edge e{variable_index(scm, arr[i][0], ep + "[0]"), variable_index(scm, arr[i][1], ep + "[1]")};
      if (std::find(all.begin(), all.end(), e) == all.end()) fail(ep, "edge not in the graph");
      kept.push_back(e);
    }
    FillPolicy fill = FillPolicy::kMode;
    if (j.contains("fill")) {
      try {
        fill = fill_policy_from_string(get_string(j.at("fill"), path + ".fill"));
      } catch (const ValidationError& e) {
        fail(path + ".fill", e.what());
      }
    }
    Surrogate s = sub_circuit(scm, kept, fill);
    if (j.contains("name")) s.name = get_string(j.at("name"), path + ".name");
    return s;
  }
  if (kind == "abstract") {
    allow_keys(j, path, {"kind", "name", "scm", "groups"});
    const std::string name = get_string(require(j, path, "name"), path + ".name");
    ScmModel high = scm_from_json(require(j, path, "scm"), path + ".scm");
    Abstraction tau;
    const auto& groups = get_array(require(j, path, "groups"), path + ".groups");
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const std::string gp = at(path + ".groups", g);
      allow_keys(groups[g], gp, {"variables", "value_map"});
      tau.groups.push_back(variable_list(scm, require(groups[g], gp, "variables"), gp + ".variables"));
      std::vector<int> map;
      const auto& vm = get_array(require(groups[g], gp, "value_map"), gp + ".value_map");
      for (std::size_t k = 0; k < vm.size(); ++k) map.push_back(get_int(vm[k], at(gp + ".value_map", k)));
      tau.value_maps.push_back(std::move(map));
    }
    Surrogate s{name, std::move(high), std::move(tau)};
    try {
      validate(s, scm);
    } catch (const ValidationError& e) {
      fail(path, e.what());
    }
    return s;
  }
  fail(path + ".kind", "expected 'sub_circuit' or 'abstract'");
}

}  // namespace

ScmModel scm_from_json(const json& j, const std::string& path) {
  allow_keys(j, path, {"exogenous", "joint", "variables"});
  ScmModel scm;
  std::vector<std::vector<double>> marginals;
  bool any_probs = false;
  bool all_probs = true;
  if (j.contains("exogenous")) {
    const auto& arr = get_array(j.at("exogenous"), path + ".exogenous");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string p = at(path + ".exogenous", i);
      allow_keys(arr[i], p, {"name", "domain", "probs"});
      ExogenousVariable u{get_string(require(arr[i], p, "name"), p + ".name"),
                          get_int(require(arr[i], p, "domain"), p + ".domain")};
      if (u.domain < 1) fail(p + ".domain", "must be >= 1");
      if (arr[i].contains("probs")) {
        any_probs = true;
        std::vector<double> probs;
        const auto& pa = get_array(arr[i].at("probs"), p + ".probs");
        for (std::size_t k = 0; k < pa.size(); ++k) probs.push_back(get_number(pa[k], at(p + ".probs", k)));
        if (probs.size() != static_cast<std::size_t>(u.domain)) fail(p + ".probs", "needs one entry per domain value");
        marginals.push_back(std::move(probs));
      } else {
        all_probs = false;
      }
      scm.exogenous.push_back(u);
    }
  }
  if (j.contains("joint")) {
    if (any_probs) fail(path + ".joint", "give either per-variable probs or a joint table, not both");
    const auto& arr = get_array(j.at("joint"), path + ".joint");
    for (std::size_t k = 0; k < arr.size(); ++k) scm.p_u.push_back(get_number(arr[k], at(path + ".joint", k)));
  } else {
    if (!all_probs) fail(path + ".exogenous", "every exogenous variable needs probs when no joint table is given");
    scm.p_u = product_distribution(marginals);
  }

  const auto& vars = get_array(require(j, path, "variables"), path + ".variables");
  // Names first so parents may refer forward.
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const std::string p = at(path + ".variables", i);
    allow_keys(vars[i], p, {"name", "domain", "parents", "exogenous", "table"});
    EndogenousVariable v;
    v.name = get_string(require(vars[i], p, "name"), p + ".name");
    v.domain = get_int(require(vars[i], p, "domain"), p + ".domain");
    if (v.domain < 1) fail(p + ".domain", "must be >= 1");
    scm.variables.push_back(v);
  }
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const std::string p = at(path + ".variables", i);
    auto& v = scm.variables[i];
    if (vars[i].contains("parents")) v.parents = variable_list(scm, vars[i].at("parents"), p + ".parents");
    std::size_t states = 1;
    for (auto parent : v.parents) states *= static_cast<std::size_t>(scm.variables[parent].domain);
    if (vars[i].contains("exogenous")) {
      const std::string name = get_string(vars[i].at("exogenous"), p + ".exogenous");
      bool found = false;
      for (std::size_t k = 0; k < scm.exogenous.size() && !found; ++k) {
        if (scm.exogenous[k].name == name) {
          v.exogenous = k;
          found = true;
        }
      }
      if (!found) fail(p + ".exogenous", "unknown exogenous variable '" + name + "'");
      states *= static_cast<std::size_t>(scm.exogenous[*v.exogenous].domain);
    }
    const auto& table = get_array(require(vars[i], p, "table"), p + ".table");
    if (table.size() != states) {
      fail(p + ".table", "expected " + std::to_string(states) + " entries, got " + std::to_string(table.size()));
    }
    for (std::size_t k = 0; k < table.size(); ++k) {
      const int value = get_int(table[k], at(p + ".table", k));
      if (value < 0 || value >= v.domain) fail(at(p + ".table", k), "value outside the domain of " + v.name);
      v.table.push_back(value);
    }
  }
  try {
    validate(scm);
  } catch (const ValidationError& e) {
    std::string message = e.what();
    if (message.rfind("scm: ", 0) == 0) message.erase(0, 5);
    fail(path, message);
  }
  return scm;
}

json scm_to_json(const ScmModel& scm) {
  json j;
  j["exogenous"] = json::array();
  for (const auto& u : scm.exogenous) j["exogenous"].push_back({{"name", u.name}, {"domain", u.domain}});
  j["joint"] = scm.p_u;
  j["variables"] = json::array();
  for (const auto& v : scm.variables) {
    json jv{{"name", v.name}, {"domain", v.domain}, {"parents", names_of(scm, v.parents)}, {"table", v.table}};
    if (v.exogenous) jv["exogenous"] = scm.exogenous[*v.exogenous].name;
    j["variables"].push_back(jv);
  }
  return j;
}

CausalQuery query_from_json(const json& j, const ScmModel& scm, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
  const std::string type = get_string(require(j, path, "type"), path + ".type");
  if (type == "observational") {
    allow_keys(j, path, {"type", "targets", "weight"});
    CausalQuery q = ObservationalMarginal{variable_list(scm, require(j, path, "targets"), path + ".targets")};
    try {
      validate(q, scm);
    } catch (const ValidationError& e) {
      fail(path, e.what());
    }
    return q;
  }
  if (type == "interventional") {
    allow_keys(j, path, {"type", "do", "targets", "weight"});
    const auto& d = require(j, path, "do");
    if (!d.is_object() || d.empty()) fail(path + ".do", "expected a non-empty object");
    Intervention intervention;
    for (const auto& [name, value] : d.items()) {
      const auto v = variable_index(scm, json(name), path + ".do." + name);
      intervention[v] = domain_value(scm, v, value, path + ".do." + name);
    }
    CausalQuery q = InterventionalMarginal{intervention, variable_list(scm, require(j, path, "targets"), path + ".targets")};
    try {
      validate(q, scm);
    } catch (const ValidationError& e) {
      fail(path, e.what());
    }
    return q;
  }
  if (type == "average_effect") {
    allow_keys(j, path, {"type", "treatment", "x1", "x0", "outcome", "weight"});
    AverageEffect q;
    q.treatment = variable_index(scm, require(j, path, "treatment"), path + ".treatment");
    q.outcome = variable_index(scm, require(j, path, "outcome"), path + ".outcome");
    q.x1 = domain_value(scm, q.treatment, require(j, path, "x1"), path + ".x1");
    q.x0 = domain_value(scm, q.treatment, require(j, path, "x0"), path + ".x0");
    if (q.treatment == q.outcome) fail(path, "treatment and outcome coincide");
    return q;
  }
  fail(path + ".type", "expected 'observational', 'interventional' or 'average_effect'");
}

json query_to_json(const CausalQuery& query, const ScmModel& scm) {
  if (const auto* q = std::get_if<ObservationalMarginal>(&query)) {
    return {{"type", "observational"}, {"targets", names_of(scm, q->targets)}};
  }
  if (const auto* q = std::get_if<InterventionalMarginal>(&query)) {
    json d = json::object();
    for (const auto& [v, value] : q->intervention) d[scm.variables[v].name] = value;
    return {{"type", "interventional"}, {"do", d}, {"targets", names_of(scm, q->targets)}};
  }
  const auto& q = std::get<AverageEffect>(query);
  return {{"type", "average_effect"},
          {"treatment", scm.variables[q.treatment].name},
          {"x1", q.x1},
          {"x0", q.x0},
          {"outcome", scm.variables[q.outcome].name}};
}

TaskSpec task_from_json(const json& j, const ScmModel& scm, const std::string& path) {
  allow_keys(j, path, {"name", "queries", "surrogates"});
  TaskSpec task;
  if (j.contains("name")) task.name = get_string(j.at("name"), path + ".name");
  const auto& queries = get_array(require(j, path, "queries"), path + ".queries");
  if (queries.empty()) fail(path + ".queries", "needs at least one query");
  std::size_t weighted = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const std::string qp = at(path + ".queries", i);
    WeightedQuery wq{query_from_json(queries[i], scm, qp), 0.0};
    if (queries[i].contains("weight")) {
      ++weighted;
      wq.weight = get_number(queries[i].at("weight"), qp + ".weight");
      if (!(wq.weight > 0.0)) fail(qp + ".weight", "must be positive");
    }
    task.mu.push_back(std::move(wq));
  }
  if (weighted == 0) {
    for (auto& wq : task.mu) wq.weight = 1.0 / static_cast<double>(task.mu.size());
  } else if (weighted != task.mu.size()) {
    fail(path + ".queries", "give a weight for every query or for none");
  } else {
    double total = 0.0;
    for (const auto& wq : task.mu) total += wq.weight;
    if (std::abs(total - 1.0) > 1e-12) fail(path + ".queries", "weights must sum to 1");
  }

  const auto& s = require(j, path, "surrogates");
  const std::string sp = path + ".surrogates";
  if (s.is_object()) {
    allow_keys(s, sp, {"enumerate", "child", "fill"});
    if (get_string(require(s, sp, "enumerate"), sp + ".enumerate") != "sub_circuits") {
      fail(sp + ".enumerate", "only 'sub_circuits' can be enumerated");
    }
    std::optional<std::size_t> child;
    if (s.contains("child")) child = variable_index(scm, s.at("child"), sp + ".child");
    FillPolicy fill = FillPolicy::kMode;
    if (s.contains("fill")) {
      try {
        fill = fill_policy_from_string(get_string(s.at("fill"), sp + ".fill"));
      } catch (const ValidationError& e) {
        fail(sp + ".fill", e.what());
      }
    }
    try {
      task.surrogate_class = all_sub_circuits(scm, child, fill);
    } catch (const ValidationError& e) {
      fail(sp, e.what());
    }
  } else {
    const auto& arr = get_array(s, sp);
    for (std::size_t i = 0; i < arr.size(); ++i) task.surrogate_class.push_back(surrogate_from_json(arr[i], scm, at(sp, i)));
  }
  if (task.surrogate_class.empty()) fail(sp, "surrogate class is empty");
  return task;
}

json answer_to_json(const Answer& answer, const ScmModel& space) {
  if (const auto* x = std::get_if<double>(&answer)) return *x;
  const auto& d = std::get<Distribution>(answer);
  return {{"targets", names_of(space, d.targets)}, {"dims", d.dims}, {"probs", d.probs}};
}

json identifiability_to_json(const TaskSpec& task, const ScmModel& scm, const IdentifiabilityResult& result,
                             double epsilon) {
  json j;
  j["task"] = task.name;
  j["epsilon"] = epsilon;
  j["queries"] = json::array();
  for (const auto& wq : task.mu) {
    json q = query_to_json(wq.query, scm);
    q["weight"] = wq.weight;
    q["description"] = describe(wq.query, scm);
    j["queries"].push_back(q);
  }
  j["surrogates"] = json::array();
  for (std::size_t i = 0; i < task.surrogate_class.size(); ++i) {
    j["surrogates"].push_back({{"name", task.surrogate_class[i].name}, {"risk", result.risks[i]}});
  }
  j["minimizers"] = json::array();
  for (auto m : result.minimizers) j["minimizers"].push_back(task.surrogate_class[m].name);
  j["min_risk"] = result.min_risk;
  j["identifiable"] = result.identifiable;
  return j;
}

}  // namespace nullprobe
