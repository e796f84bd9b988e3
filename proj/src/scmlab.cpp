#include "nullprobe/scmlab.hpp"

#include "nullprobe/errors.hpp"
#include "nullprobe/parallel.hpp"
#include "nullprobe/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace nullprobe {

namespace {

int exogenous_domain(const ScmModel& scm, const EndogenousVariable& v) {
  return v.exogenous ? scm.exogenous[*v.exogenous].domain : 1;
}

std::size_t parent_states(const ScmModel& scm, const EndogenousVariable& v) {
  std::size_t n = 1;
  for (auto p : v.parents) n *= static_cast<std::size_t>(scm.variables[p].domain);
  return n;
}

std::size_t joint_states(const ScmModel& scm) {
  std::size_t n = 1;
  for (const auto& u : scm.exogenous) {
    n *= static_cast<std::size_t>(u.domain);
    if (n > kMaxExogenousStates) throw ValidationError("scm: exogenous joint exceeds 2^20 states");
  }
  return n;
}

// Decodes a mixed-radix index, most significant digit first.
void decode(std::size_t index, const std::vector<int>& dims, std::vector<int>& out) {
  out.resize(dims.size());
  for (std::size_t i = dims.size(); i-- > 0;) {
    out[i] = static_cast<int>(index % static_cast<std::size_t>(dims[i]));
    index /= static_cast<std::size_t>(dims[i]);
  }
}

std::vector<int> exogenous_dims(const ScmModel& scm) {
  std::vector<int> dims;
  for (const auto& u : scm.exogenous) dims.push_back(u.domain);
  return dims;
}

// Endogenous values for one exogenous assignment, interventions applied.
void evaluate(const ScmModel& scm, const std::vector<std::size_t>& order, const std::vector<int>& u,
              const Intervention& intervention, std::vector<int>& values) {
  values.assign(scm.variables.size(), 0);
  for (auto i : order) {
    if (auto it = intervention.find(i); it != intervention.end()) {
      values[i] = it->second;
      continue;
    }
    const auto& v = scm.variables[i];
    std::size_t index = 0;
    for (auto p : v.parents) index = index * static_cast<std::size_t>(scm.variables[p].domain) + static_cast<std::size_t>(values[p]);
    const int m = exogenous_domain(scm, v);
    index = index * static_cast<std::size_t>(m) + (v.exogenous ? static_cast<std::size_t>(u[*v.exogenous]) : 0);
    values[i] = v.table[index];
  }
}

Distribution empty_distribution(const ScmModel& scm, const std::vector<std::size_t>& targets) {
  Distribution d;
  d.targets = targets;
  std::size_t size = 1;
  for (auto t : targets) {
    d.dims.push_back(scm.variables[t].domain);
    size *= static_cast<std::size_t>(scm.variables[t].domain);
  }
  d.probs.assign(size, 0.0);
  return d;
}

std::size_t target_index(const Distribution& d, const std::vector<int>& values) {
  std::size_t index = 0;
  for (std::size_t i = 0; i < d.targets.size(); ++i) {
    index = index * static_cast<std::size_t>(d.dims[i]) + static_cast<std::size_t>(values[d.targets[i]]);
  }
  return index;
}

Distribution exact_marginal(const ScmModel& scm, const Intervention& intervention,
                            const std::vector<std::size_t>& targets) {
  const auto order = scm.topological_order();
  const auto dims = exogenous_dims(scm);
  Distribution d = empty_distribution(scm, targets);
  std::vector<int> u;
  std::vector<int> values;
  for (std::size_t k = 0; k < scm.p_u.size(); ++k) {
    if (scm.p_u[k] <= 0.0) continue;
    decode(k, dims, u);
    evaluate(scm, order, u, intervention, values);
    d.probs[target_index(d, values)] += scm.p_u[k];
  }
  return d;
}

using MarginalOracle = std::function<Distribution(const Intervention&, const std::vector<std::size_t>&)>;

void check_variable(const ScmModel& scm, std::size_t v, const char* what) {
  if (v >= scm.variables.size()) throw ValidationError(std::string("query: ") + what + " variable out of range");
}

void check_value(const ScmModel& scm, std::size_t v, int value) {
  if (value < 0 || value >= scm.variables[v].domain) {
    throw ValidationError("query: value " + std::to_string(value) + " outside the domain of " + scm.variables[v].name);
  }
}

void check_targets(const ScmModel& scm, const std::vector<std::size_t>& targets) {
  if (targets.empty()) throw ValidationError("query: empty target set");
  std::set<std::size_t> seen;
  for (auto t : targets) {
    check_variable(scm, t, "target");
    if (!seen.insert(t).second) throw ValidationError("query: repeated target " + scm.variables[t].name);
  }
}

// High-level groups covering `targets` exactly, ascending.
std::vector<std::size_t> covering_groups(const Abstraction& tau, const std::vector<std::size_t>& targets) {
  const std::set<std::size_t> wanted(targets.begin(), targets.end());
  std::vector<std::size_t> groups;
  std::size_t covered = 0;
  for (std::size_t g = 0; g < tau.groups.size(); ++g) {
    std::size_t hits = 0;
    for (auto v : tau.groups[g]) hits += wanted.count(v);
    if (hits == 0) continue;
    if (hits != tau.groups[g].size()) throw ValidationError("abstraction: query splits a variable group");
    groups.push_back(g);
    covered += hits;
  }
  if (covered != wanted.size()) throw ValidationError("abstraction: query touches an unmapped variable");
  return groups;
}

int group_value(const ScmModel& low, const Abstraction& tau, std::size_t g, const std::vector<int>& values) {
  std::size_t index = 0;
  for (auto v : tau.groups[g]) index = index * static_cast<std::size_t>(low.variables[v].domain) + static_cast<std::size_t>(values[v]);
  return tau.value_maps[g][index];
}

// Pushes a low-level distribution through tau onto the covering groups.
Distribution push_forward(const ScmModel& low, const Abstraction& tau, const Distribution& d, const ScmModel& high) {
  const auto groups = covering_groups(tau, d.targets);
  Distribution out = empty_distribution(high, groups);
  std::vector<int> digits;
  std::vector<int> values(low.variables.size(), 0);
  std::vector<int> high_values(high.variables.size(), 0);
  for (std::size_t k = 0; k < d.probs.size(); ++k) {
    if (d.probs[k] == 0.0) continue;
    decode(k, d.dims, digits);
    for (std::size_t i = 0; i < d.targets.size(); ++i) values[d.targets[i]] = digits[i];
    for (auto g : groups) high_values[g] = group_value(low, tau, g, values);
    out.probs[target_index(out, high_values)] += d.probs[k];
  }
  return out;
}

std::size_t singleton_group(const Abstraction& tau, std::size_t v) {
  for (std::size_t g = 0; g < tau.groups.size(); ++g) {
    if (tau.groups[g].size() == 1 && tau.groups[g][0] == v) return g;
  }
  throw ValidationError("abstraction: average effects need single-variable groups");
}

double expectation(const Distribution& d) {
  double e = 0.0;
  for (std::size_t k = 0; k < d.probs.size(); ++k) e += static_cast<double>(k) * d.probs[k];
  return e;
}

// Answer in the variables of `high` (== low without an abstraction).
Answer answer_with(const ScmModel& low, const CausalQuery& query, const MarginalOracle& marginal,
                   const Abstraction* tau, const ScmModel& high) {
  auto project = [&](const Distribution& d) { return tau ? push_forward(low, *tau, d, high) : d; };
  if (const auto* q = std::get_if<ObservationalMarginal>(&query)) return project(marginal({}, q->targets));
  if (const auto* q = std::get_if<InterventionalMarginal>(&query)) {
    return project(marginal(q->intervention, q->targets));
  }
  const auto& q = std::get<AverageEffect>(query);
  const std::vector<std::size_t> outcome{q.outcome};
  if (tau) {
    singleton_group(*tau, q.outcome);
    singleton_group(*tau, q.treatment);
  }
  // After projection the outcome's index is its (high-level) value.
  const Distribution d1 = project(marginal({{q.treatment, q.x1}}, outcome));
  const Distribution d0 = project(marginal({{q.treatment, q.x0}}, outcome));
  return expectation(d1) - expectation(d0);
}

CausalQuery translate(const Abstraction& tau, const ScmModel& low, const CausalQuery& query) {
  auto map_targets = [&](const std::vector<std::size_t>& t) { return covering_groups(tau, t); };
  if (const auto* q = std::get_if<ObservationalMarginal>(&query)) return ObservationalMarginal{map_targets(q->targets)};
  if (const auto* q = std::get_if<InterventionalMarginal>(&query)) {
    std::vector<std::size_t> vars;
    std::vector<int> values(low.variables.size(), 0);
    for (const auto& [v, value] : q->intervention) {
      vars.push_back(v);
      values[v] = value;
    }
    Intervention high;
    for (auto g : covering_groups(tau, vars)) high[g] = group_value(low, tau, g, values);
    return InterventionalMarginal{high, map_targets(q->targets)};
  }
  const auto& q = std::get<AverageEffect>(query);
  const auto gt = singleton_group(tau, q.treatment);
  const auto go = singleton_group(tau, q.outcome);
  return AverageEffect{gt, tau.value_maps[gt][static_cast<std::size_t>(q.x1)],
                       tau.value_maps[gt][static_cast<std::size_t>(q.x0)], go};
}

std::vector<double> observational_modes(const ScmModel& scm) {
  std::vector<double> modes(scm.variables.size(), 0.0);
  for (std::size_t v = 0; v < scm.variables.size(); ++v) {
    const Distribution d = exact_marginal(scm, {}, {v});
    modes[v] = static_cast<double>(std::max_element(d.probs.begin(), d.probs.end()) - d.probs.begin());
  }
  return modes;
}

std::string edge_list_name(const ScmModel& scm, const std::vector<Edge>& kept) {
  std::string name = "subcircuit{";
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (i > 0) name += ",";
    name += scm.variables[kept[i].parent].name + "->" + scm.variables[kept[i].child].name;
  }
  return name + "}";
}

}  // namespace

std::size_t ScmModel::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < variables.size(); ++i) {
    if (variables[i].name == name) return i;
  }
  throw ValidationError("scm: unknown variable '" + name + "'");
}

std::vector<std::size_t> ScmModel::topological_order() const {
  const std::size_t n = variables.size();
  std::vector<std::size_t> indegree(n, 0);
  std::vector<std::vector<std::size_t>> children(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto p : variables[i].parents) {
      if (p >= n) throw ValidationError("scm: parent index out of range for " + variables[i].name);
      children[p].push_back(i);
      ++indegree[i];
    }
  }
  // Smallest ready index first, so the order is canonical.
  std::set<std::size_t> ready;
  for (std::size_t i = 0; i < n; ++i) {
    if (indegree[i] == 0) ready.insert(i);
  }
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const std::size_t i = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(i);
    for (auto c : children[i]) {
      if (--indegree[c] == 0) ready.insert(c);
    }
  }
  if (order.size() != n) throw ValidationError("scm: graph has a cycle");
  return order;
}

void validate(const ScmModel& scm) {
  if (scm.variables.empty()) throw ValidationError("scm: no variables");
  std::set<std::string> names;
  for (const auto& u : scm.exogenous) {
    if (u.domain < 1) throw ValidationError("scm: exogenous " + u.name + " needs a positive domain");
    if (!names.insert(u.name).second) throw ValidationError("scm: duplicate name " + u.name);
  }
  for (std::size_t i = 0; i < scm.variables.size(); ++i) {
    const auto& v = scm.variables[i];
    if (v.domain < 1) throw ValidationError("scm: variable " + v.name + " needs a positive domain");
    if (!names.insert(v.name).second) throw ValidationError("scm: duplicate name " + v.name);
    std::set<std::size_t> distinct(v.parents.begin(), v.parents.end());
    if (distinct.size() != v.parents.size()) throw ValidationError("scm: repeated parent of " + v.name);
    for (auto p : v.parents) {
      if (p >= scm.variables.size()) throw ValidationError("scm: parent index out of range for " + v.name);
      if (p == i) throw ValidationError("scm: " + v.name + " is its own parent");
    }
    if (v.exogenous && *v.exogenous >= scm.exogenous.size()) {
      throw ValidationError("scm: exogenous index out of range for " + v.name);
    }
  }
  scm.topological_order();
  for (const auto& v : scm.variables) {
    const std::size_t expected = parent_states(scm, v) * static_cast<std::size_t>(exogenous_domain(scm, v));
    if (v.table.size() != expected) {
      throw ValidationError("scm: mechanism of " + v.name + " needs " + std::to_string(expected) + " entries, got " +
                            std::to_string(v.table.size()));
    }
    for (int value : v.table) {
      if (value < 0 || value >= v.domain) throw ValidationError("scm: mechanism of " + v.name + " leaves its domain");
    }
  }
  const std::size_t states = joint_states(scm);
  if (scm.p_u.size() != states) {
    throw ValidationError("scm: p_u needs " + std::to_string(states) + " entries, got " + std::to_string(scm.p_u.size()));
  }
  double total = 0.0;
  for (double p : scm.p_u) {
    if (!(p >= 0.0)) throw ValidationError("scm: p_u has a negative or NaN entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ValidationError("scm: p_u does not sum to 1");
}

std::vector<double> product_distribution(const std::vector<std::vector<double>>& marginals) {
  std::vector<double> joint{1.0};
  for (const auto& m : marginals) {
    std::vector<double> next;
    next.reserve(joint.size() * m.size());
    for (double a : joint)
      for (double b : m) next.push_back(a * b);
    joint = std::move(next);
  }
  return joint;
}

void validate(const CausalQuery& query, const ScmModel& scm) {
  if (const auto* q = std::get_if<ObservationalMarginal>(&query)) {
    check_targets(scm, q->targets);
  } else if (const auto* q = std::get_if<InterventionalMarginal>(&query)) {
    check_targets(scm, q->targets);
    for (const auto& [v, value] : q->intervention) {
      check_variable(scm, v, "intervened");
      check_value(scm, v, value);
    }
  } else {
    const auto& ae = std::get<AverageEffect>(query);
    check_variable(scm, ae.treatment, "treatment");
    check_variable(scm, ae.outcome, "outcome");
    if (ae.treatment == ae.outcome) throw ValidationError("query: treatment and outcome coincide");
    check_value(scm, ae.treatment, ae.x1);
    check_value(scm, ae.treatment, ae.x0);
  }
}

std::string describe(const CausalQuery& query, const ScmModel& scm) {
  auto names = [&](const std::vector<std::size_t>& vs) {
    std::string s;
    for (std::size_t i = 0; i < vs.size(); ++i) s += (i ? "," : "") + scm.variables[vs[i]].name;
    return s;
  };
  if (const auto* q = std::get_if<ObservationalMarginal>(&query)) return "P(" + names(q->targets) + ")";
  if (const auto* q = std::get_if<InterventionalMarginal>(&query)) {
    std::string s = "P(" + names(q->targets) + " | do(";
    bool first = true;
    for (const auto& [v, value] : q->intervention) {
      s += (first ? "" : ",") + scm.variables[v].name + "=" + std::to_string(value);
      first = false;
    }
    return s + "))";
  }
  const auto& q = std::get<AverageEffect>(query);
  return "E[" + scm.variables[q.outcome].name + " | do(" + scm.variables[q.treatment].name + "=" +
         std::to_string(q.x1) + ")] - E[" + scm.variables[q.outcome].name + " | do(" +
         scm.variables[q.treatment].name + "=" + std::to_string(q.x0) + ")]";
}

double discrepancy(const Answer& a, const Answer& b) {
  if (a.index() != b.index()) throw ValidationError("discrepancy: answers of different types");
  if (const auto* x = std::get_if<double>(&a)) return std::abs(*x - std::get<double>(b));
  const auto& p = std::get<Distribution>(a);
  const auto& q = std::get<Distribution>(b);
  if (p.dims != q.dims) throw ValidationError("discrepancy: distributions over different spaces");
  double sum = 0.0;
  for (std::size_t k = 0; k < p.probs.size(); ++k) sum += std::abs(p.probs[k] - q.probs[k]);
  return 0.5 * sum;
}

void validate(const QueryDistribution& mu, const ScmModel& scm) {
  if (mu.empty()) throw ValidationError("query distribution is empty");
  double total = 0.0;
  for (const auto& wq : mu) {
    if (!(wq.weight > 0.0)) throw ValidationError("query distribution: weights must be positive");
    validate(wq.query, scm);
    total += wq.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ValidationError("query distribution: weights must sum to 1");
}

QueryDistribution uniform_queries(const std::vector<CausalQuery>& queries) {
  QueryDistribution mu;
  for (const auto& q : queries) mu.push_back({q, 1.0 / static_cast<double>(queries.size())});
  return mu;
}

Answer eval_query(const ScmModel& scm, const CausalQuery& query) {
  validate(query, scm);
  const MarginalOracle oracle = [&](const Intervention& i, const std::vector<std::size_t>& t) {
    return exact_marginal(scm, i, t);
  };
  return answer_with(scm, query, oracle, nullptr, scm);
}

std::vector<std::vector<int>> sample(const ScmModel& scm, std::size_t n, std::uint64_t seed,
                                     const Intervention& intervention) {
  if (n == 0) throw ValidationError("sample: n must be >= 1");
  for (const auto& [v, value] : intervention) {
    check_variable(scm, v, "intervened");
    check_value(scm, v, value);
  }
  const auto order = scm.topological_order();
  const auto dims = exogenous_dims(scm);
  std::vector<double> cumulative(scm.p_u.size());
  std::partial_sum(scm.p_u.begin(), scm.p_u.end(), cumulative.begin());
  Rng rng(seed);
  std::vector<std::vector<int>> rows(n);
  std::vector<int> u;
  for (auto& row : rows) {
    const double r = rng.uniform() * cumulative.back();
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
    if (it == cumulative.end()) --it;
    // rounding at the top can land on a trailing zero-mass state
    auto k = static_cast<std::size_t>(it - cumulative.begin());
    while (scm.p_u[k] <= 0.0 && k > 0) --k;
    decode(k, dims, u);
    evaluate(scm, order, u, intervention, row);
  }
  return rows;
}

void validate(const Surrogate& surrogate, const ScmModel& system) {
  validate(surrogate.model);
  if (!surrogate.abstraction) {
    if (surrogate.model.variables.size() != system.variables.size()) {
      throw ValidationError("surrogate " + surrogate.name + ": variable count differs from the system");
    }
    for (std::size_t i = 0; i < system.variables.size(); ++i) {
      if (surrogate.model.variables[i].domain != system.variables[i].domain) {
        throw ValidationError("surrogate " + surrogate.name + ": domain of " + system.variables[i].name + " differs");
      }
    }
    return;
  }
  const auto& tau = *surrogate.abstraction;
  if (tau.groups.size() != surrogate.model.variables.size() || tau.value_maps.size() != tau.groups.size()) {
    throw ValidationError("surrogate " + surrogate.name + ": one group and value map per abstract variable");
  }
  std::set<std::size_t> used;
  for (std::size_t g = 0; g < tau.groups.size(); ++g) {
    if (tau.groups[g].empty()) throw ValidationError("surrogate " + surrogate.name + ": empty group");
    std::size_t states = 1;
    for (auto v : tau.groups[g]) {
      if (v >= system.variables.size()) throw ValidationError("surrogate " + surrogate.name + ": group variable out of range");
      if (!used.insert(v).second) throw ValidationError("surrogate " + surrogate.name + ": groups overlap");
      states *= static_cast<std::size_t>(system.variables[v].domain);
    }
    if (tau.value_maps[g].size() != states) {
      throw ValidationError("surrogate " + surrogate.name + ": value map " + std::to_string(g) + " needs " +
                            std::to_string(states) + " entries");
    }
    for (int value : tau.value_maps[g]) {
      if (value < 0 || value >= surrogate.model.variables[g].domain) {
        throw ValidationError("surrogate " + surrogate.name + ": value map leaves the abstract domain");
      }
    }
  }
}

std::vector<Edge> edges(const ScmModel& scm) {
  std::vector<Edge> out;
  for (std::size_t c = 0; c < scm.variables.size(); ++c) {
    for (auto p : scm.variables[c].parents) out.push_back({p, c});
  }
  return out;
}

std::string to_string(FillPolicy policy) { return policy == FillPolicy::kMode ? "mode" : "zero"; }

FillPolicy fill_policy_from_string(const std::string& name) {
  if (name == "mode") return FillPolicy::kMode;
  if (name == "zero") return FillPolicy::kZero;
  throw ValidationError("unknown fill policy '" + name + "'");
}

Surrogate sub_circuit(const ScmModel& scm, const std::vector<Edge>& kept, FillPolicy fill) {
  validate(scm);
  const auto all = edges(scm);
  for (const auto& e : kept) {
    if (std::find(all.begin(), all.end(), e) == all.end()) throw ValidationError("sub_circuit: edge not in the graph");
  }
  std::vector<double> fills(scm.variables.size(), 0.0);
  if (fill == FillPolicy::kMode) fills = observational_modes(scm);

  ScmModel out = scm;
  for (std::size_t c = 0; c < scm.variables.size(); ++c) {
    const auto& v = scm.variables[c];
    std::vector<std::size_t> new_parents;
    for (auto p : v.parents) {
      if (std::find(kept.begin(), kept.end(), Edge{p, c}) != kept.end()) new_parents.push_back(p);
    }
    if (new_parents.size() == v.parents.size()) continue;
    auto& nv = out.variables[c];
    nv.parents = new_parents;
    const int m = exogenous_domain(scm, v);
    std::vector<int> new_dims;
    for (auto p : new_parents) new_dims.push_back(scm.variables[p].domain);
    const std::size_t states = parent_states(out, nv);
    nv.table.assign(states * static_cast<std::size_t>(m), 0);
    std::vector<int> digits;
    for (std::size_t s = 0; s < states; ++s) {
      decode(s, new_dims, digits);
      std::size_t old_index = 0;
      for (auto p : v.parents) {
        const auto pos = std::find(new_parents.begin(), new_parents.end(), p) - new_parents.begin();
        const int value = static_cast<std::size_t>(pos) < new_parents.size() ? digits[static_cast<std::size_t>(pos)]
                                                                             : static_cast<int>(fills[p]);
        old_index = old_index * static_cast<std::size_t>(scm.variables[p].domain) + static_cast<std::size_t>(value);
      }
      for (int u = 0; u < m; ++u) {
        nv.table[s * static_cast<std::size_t>(m) + static_cast<std::size_t>(u)] =
            v.table[old_index * static_cast<std::size_t>(m) + static_cast<std::size_t>(u)];
      }
    }
  }
  return {edge_list_name(scm, kept), std::move(out), std::nullopt};
}

std::vector<Surrogate> all_sub_circuits(const ScmModel& scm, std::optional<std::size_t> child, FillPolicy fill) {
  const auto all = edges(scm);
  std::vector<Edge> fixed;
  std::vector<Edge> free;
  for (const auto& e : all) {
    if (!child || e.child == *child) {
      free.push_back(e);
    } else {
      fixed.push_back(e);
    }
  }
  if (free.size() > 20) throw ValidationError("all_sub_circuits: too many edges to enumerate");
  std::vector<Surrogate> out;
  for (std::size_t mask = 0; mask < (std::size_t{1} << free.size()); ++mask) {
    std::vector<Edge> kept;
    for (const auto& e : all) {
      const auto it = std::find(free.begin(), free.end(), e);
      if (it == free.end() || (mask >> static_cast<std::size_t>(it - free.begin()) & 1U)) kept.push_back(e);
    }
    out.push_back(sub_circuit(scm, kept, fill));
  }
  return out;
}

Surrogate abstract_surrogate(std::string name, ScmModel abstract_model, Abstraction abstraction) {
  validate(abstract_model);
  return {std::move(name), std::move(abstract_model), std::move(abstraction)};
}

Answer system_answer(const ScmModel& system, const Surrogate& surrogate, const CausalQuery& query) {
  validate(query, system);
  const MarginalOracle oracle = [&](const Intervention& i, const std::vector<std::size_t>& t) {
    return exact_marginal(system, i, t);
  };
  const Abstraction* tau = surrogate.abstraction ? &*surrogate.abstraction : nullptr;
  return answer_with(system, query, oracle, tau, tau ? surrogate.model : system);
}

Answer surrogate_answer(const Surrogate& surrogate, const ScmModel& system, const CausalQuery& query) {
  if (!surrogate.abstraction) return eval_query(surrogate.model, query);
  validate(query, system);
  return eval_query(surrogate.model, translate(*surrogate.abstraction, system, query));
}

double population_risk(const TaskSpec& task, const Surrogate& surrogate, const ScmModel& scm) {
  validate(task.mu, scm);
  double risk = 0.0;
  for (const auto& wq : task.mu) {
    risk += wq.weight * discrepancy(system_answer(scm, surrogate, wq.query), surrogate_answer(surrogate, scm, wq.query));
  }
  return risk;
}

double empirical_risk(const Surrogate& surrogate, const ScmModel& scm, const std::vector<CausalQuery>& queries,
                      std::size_t trace_sample_size, std::uint64_t seed) {
  if (queries.empty()) throw ValidationError("empirical_risk: no queries");
  if (trace_sample_size == 0) throw ValidationError("empirical_risk: trace_sample_size must be >= 1");
  const Abstraction* tau = surrogate.abstraction ? &*surrogate.abstraction : nullptr;
  double total = 0.0;
  for (std::size_t j = 0; j < queries.size(); ++j) {
    validate(queries[j], scm);
    std::uint64_t draws = 0;
    const std::uint64_t query_seed = derive_seed(seed, j);
    const MarginalOracle sampled = [&](const Intervention& i, const std::vector<std::size_t>& t) {
      const auto rows = sample(scm, trace_sample_size, derive_seed(query_seed, draws++), i);
      Distribution d = empty_distribution(scm, t);
      for (const auto& row : rows) d.probs[target_index(d, row)] += 1.0;
      for (auto& p : d.probs) p /= static_cast<double>(rows.size());
      return d;
    };
    const Answer estimate = answer_with(scm, queries[j], sampled, tau, tau ? surrogate.model : scm);
    total += discrepancy(estimate, surrogate_answer(surrogate, scm, queries[j]));
  }
  return total / static_cast<double>(queries.size());
}

std::vector<CausalQuery> sample_queries(const QueryDistribution& mu, std::size_t n, std::uint64_t seed) {
  if (mu.empty()) throw ValidationError("sample_queries: empty query distribution");
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& wq : mu) cumulative.push_back(total += wq.weight);
  Rng rng(seed);
  std::vector<CausalQuery> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = rng.uniform() * total;
    auto k = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
    out.push_back(mu[std::min(k, mu.size() - 1)].query);
  }
  return out;
}

IdentifiabilityResult identifiability_check(const TaskSpec& task, const ScmModel& scm, double epsilon,
                                            const SurrogateEquivalence& equivalent, std::size_t threads) {
  if (task.surrogate_class.empty()) throw ValidationError("identifiability_check: empty surrogate class");
  if (!(epsilon >= 0.0)) throw ValidationError("identifiability_check: epsilon must be >= 0");
  validate(scm);
  validate(task.mu, scm);
  for (const auto& s : task.surrogate_class) validate(s, scm);

  IdentifiabilityResult result;
  result.risks.assign(task.surrogate_class.size(), 0.0);
  parallel_for(task.surrogate_class.size(), threads,
               [&](std::size_t i) { result.risks[i] = population_risk(task, task.surrogate_class[i], scm); });
  result.min_risk = *std::min_element(result.risks.begin(), result.risks.end());
  for (std::size_t i = 0; i < result.risks.size(); ++i) {
    if (result.risks[i] <= result.min_risk + epsilon) result.minimizers.push_back(i);
  }
  result.identifiable = result.minimizers.size() == 1;
  if (!result.identifiable && equivalent) {
    result.identifiable = true;
    for (std::size_t a = 0; a < result.minimizers.size() && result.identifiable; ++a) {
      for (std::size_t b = a + 1; b < result.minimizers.size(); ++b) {
        if (!equivalent(task.surrogate_class[result.minimizers[a]], task.surrogate_class[result.minimizers[b]])) {
          result.identifiable = false;
          break;
        }
      }
    }
  }
  return result;
}

namespace {

EndogenousVariable variable(std::string name, std::vector<std::size_t> parents, std::optional<std::size_t> exogenous,
                            std::vector<int> table) {
  return {std::move(name), 2, std::move(parents), exogenous, std::move(table)};
}

CanonicalExample overdetermined_or() {
  CanonicalExample ex;
  ex.name = "overdetermined_or";
  auto& scm = ex.scm;
  scm.exogenous = {{"U", 2}};
  scm.p_u = {0.5, 0.5};
  scm.variables = {variable("A", {}, 0, {0, 1}), variable("B", {}, 0, {0, 1}),
                   variable("Y", {0, 1}, std::nullopt, {0, 1, 1, 1})};
  validate(scm);
  ex.task.name = ex.name;
  ex.task.mu = uniform_queries({ObservationalMarginal{{2}}});
  ex.task.surrogate_class = all_sub_circuits(scm, 2);
  ex.expected_identifiable = false;
  return ex;
}

CanonicalExample chain3() {
  CanonicalExample ex;
  ex.name = "chain3";
  auto& scm = ex.scm;
  scm.exogenous = {{"U_A", 2}, {"U_B", 2}, {"U_C", 2}};
  scm.p_u = product_distribution({{0.3, 0.7}, {0.8, 0.2}, {0.9, 0.1}});
  // B = A xor U_B, C = B xor U_C
  scm.variables = {variable("A", {}, 0, {0, 1}), variable("B", {0}, 1, {0, 1, 1, 0}),
                   variable("C", {1}, 2, {0, 1, 1, 0})};
  validate(scm);
  ex.task.name = ex.name;
  ex.task.mu = uniform_queries({ObservationalMarginal{{0, 1, 2}}, InterventionalMarginal{{{0, 0}}, {1, 2}},
                                InterventionalMarginal{{{0, 1}}, {1, 2}}, InterventionalMarginal{{{1, 0}}, {2}},
                                InterventionalMarginal{{{1, 1}}, {2}}});
  ex.task.surrogate_class = all_sub_circuits(scm);
  ex.expected_identifiable = true;
  return ex;
}

CanonicalExample underspecified_probe() {
  CanonicalExample ex;
  ex.name = "underspecified_probe";
  auto& scm = ex.scm;
  scm.exogenous = {{"U", 2}};
  scm.p_u = {0.4, 0.6};
  scm.variables = {variable("X", {}, 0, {0, 1}), variable("Y", {0}, std::nullopt, {0, 1})};
  validate(scm);

  Surrogate full = sub_circuit(scm, edges(scm));
  full.name = "full";
  Surrogate empty = sub_circuit(scm, {});
  empty.name = "empty";
  // X and Y both read U directly: identical observationally, but Y ignores do(X).
  ScmModel common = scm;
  common.variables[1] = variable("Y", {}, 0, {0, 1});
  Surrogate common_cause = abstract_surrogate("common_cause", common, Abstraction{{{0}, {1}}, {{0, 1}, {0, 1}}});

  ex.task.name = ex.name;
  ex.task.mu = uniform_queries({ObservationalMarginal{{0, 1}}});
  ex.task.surrogate_class = {full, empty, common_cause};
  ex.expected_identifiable = false;
  ex.withheld = InterventionalMarginal{{{0, 0}}, {1}};
  return ex;
}

}  // namespace

std::vector<CanonicalExample> canonical_examples() { return {overdetermined_or(), chain3(), underspecified_probe()}; }

CanonicalExample canonical_example(const std::string& name) {
  if (name == "overdetermined_or") return overdetermined_or();
  if (name == "chain3") return chain3();
  if (name == "underspecified_probe") return underspecified_probe();
  throw ValidationError("unknown canonical example '" + name + "'");
}

}  // namespace nullprobe
