#pragma once

// Finite structural causal models with exact inference, hard interventions,
// causal queries, surrogate explanations, population and empirical risk, and
// an exhaustive identifiability checker.
//
// Mechanism tables: variable i with parents p_1..p_k (first parent most
// significant in a mixed-radix index) and exogenous domain m stores
// table[parent_index * m + u]. A variable without an exogenous input has m = 1.
// The exogenous joint P_U is a table over all exogenous variables, again
// mixed radix with the first exogenous variable most significant.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace nullprobe {

struct ExogenousVariable {
  std::string name;
  int domain = 2;
};

struct EndogenousVariable {
  std::string name;
  int domain = 2;
  std::vector<std::size_t> parents;
  std::optional<std::size_t> exogenous;  // several variables may share one
  std::vector<int> table;
};

struct ScmModel {
  std::vector<ExogenousVariable> exogenous;
  std::vector<EndogenousVariable> variables;
  std::vector<double> p_u;

  std::size_t index_of(const std::string& name) const;  // ValidationError if absent
  std::vector<std::size_t> topological_order() const;  // ValidationError on a cycle
};

inline constexpr std::size_t kMaxExogenousStates = std::size_t{1} << 20;

void validate(const ScmModel& scm);

// Joint table for independent exogenous variables.
std::vector<double> product_distribution(const std::vector<std::vector<double>>& marginals);

// Variable index -> forced value.
using Intervention = std::map<std::size_t, int>;

struct ObservationalMarginal {
  std::vector<std::size_t> targets;
};
struct InterventionalMarginal {
  Intervention intervention;
  std::vector<std::size_t> targets;
};
// E[outcome | do(treatment = x1)] - E[outcome | do(treatment = x0)], values
// taken as their integer codes.
struct AverageEffect {
  std::size_t treatment = 0;
  int x1 = 1;
  int x0 = 0;
  std::size_t outcome = 0;
};

using CausalQuery = std::variant<ObservationalMarginal, InterventionalMarginal, AverageEffect>;

void validate(const CausalQuery& query, const ScmModel& scm);
std::string describe(const CausalQuery& query, const ScmModel& scm);

// Joint distribution over `targets`, mixed radix in target order.
struct Distribution {
  std::vector<std::size_t> targets;
  std::vector<int> dims;
  std::vector<double> probs;
};

using Answer = std::variant<Distribution, double>;

// Total variation between distributions, absolute difference between scalars.
double discrepancy(const Answer& a, const Answer& b);

struct WeightedQuery {
  CausalQuery query;
  double weight = 1.0;
};
using QueryDistribution = std::vector<WeightedQuery>;

// Weights positive and summing to 1 within 1e-12.
void validate(const QueryDistribution& mu, const ScmModel& scm);
QueryDistribution uniform_queries(const std::vector<CausalQuery>& queries);

Answer eval_query(const ScmModel& scm, const CausalQuery& query);

// n x |V| table of endogenous values, one i.i.d. exogenous draw per row.
std::vector<std::vector<int>> sample(const ScmModel& scm, std::size_t n, std::uint64_t seed,
                                     const Intervention& intervention = {});

// Low-level to high-level map: group g of low-level variables becomes
// high-level variable g, whose value is value_maps[g][mixed-radix assignment of
// the group].
struct Abstraction {
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::vector<int>> value_maps;
};

struct Surrogate {
  std::string name;
  ScmModel model;
  std::optional<Abstraction> abstraction;  // absent: same variables as the system
};

void validate(const Surrogate& surrogate, const ScmModel& system);

struct Edge {
  std::size_t parent = 0;
  std::size_t child = 0;
  bool operator==(const Edge&) const = default;
};

std::vector<Edge> edges(const ScmModel& scm);

// Removed edges feed the child a fixed value for the parent: the parent's
// observational mode (ties to the lowest value) or 0.
enum class FillPolicy { kMode, kZero };
std::string to_string(FillPolicy policy);
FillPolicy fill_policy_from_string(const std::string& name);

Surrogate sub_circuit(const ScmModel& scm, const std::vector<Edge>& kept, FillPolicy fill = FillPolicy::kMode);
// Every subset of the edges into `child` (all edges when absent), other edges kept.
std::vector<Surrogate> all_sub_circuits(const ScmModel& scm, std::optional<std::size_t> child = std::nullopt,
                                        FillPolicy fill = FillPolicy::kMode);
Surrogate abstract_surrogate(std::string name, ScmModel abstract_model, Abstraction abstraction);

// The system's answer expressed in the surrogate's variables.
Answer system_answer(const ScmModel& system, const Surrogate& surrogate, const CausalQuery& query);
Answer surrogate_answer(const Surrogate& surrogate, const ScmModel& system, const CausalQuery& query);

struct TaskSpec {
  std::string name;
  QueryDistribution mu;
  std::vector<Surrogate> surrogate_class;
};

double population_risk(const TaskSpec& task, const Surrogate& surrogate, const ScmModel& scm);

// System answers are estimated from trace_sample_size draws per query (under
// the query's interventions); queries are weighted uniformly.
double empirical_risk(const Surrogate& surrogate, const ScmModel& scm, const std::vector<CausalQuery>& queries,
                      std::size_t trace_sample_size, std::uint64_t seed);
std::vector<CausalQuery> sample_queries(const QueryDistribution& mu, std::size_t n, std::uint64_t seed);

using SurrogateEquivalence = std::function<bool(const Surrogate&, const Surrogate&)>;

struct IdentifiabilityResult {
  std::vector<double> risks;          // per surrogate, class order
  std::vector<std::size_t> minimizers;  // indices with risk <= min_risk + epsilon
  double min_risk = 0.0;
  bool identifiable = false;
};

// Identifiable when exactly one minimizer exists, or, with `equivalent`, when
// all minimizers are pairwise equivalent.
IdentifiabilityResult identifiability_check(const TaskSpec& task, const ScmModel& scm, double epsilon,
                                            const SurrogateEquivalence& equivalent = nullptr,
                                            std::size_t threads = 1);

struct CanonicalExample {
  std::string name;
  ScmModel scm;
  TaskSpec task;
  bool expected_identifiable = false;
  std::optional<CausalQuery> withheld;  // restores identifiability when added to mu
};

// overdetermined_or, chain3, underspecified_probe.
std::vector<CanonicalExample> canonical_examples();
CanonicalExample canonical_example(const std::string& name);

}  // namespace nullprobe
