#include <doctest.h>

#include "nullprobe/errors.hpp"
#include "nullprobe/scm_json.hpp"
#include "nullprobe/scmlab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

using namespace nullprobe;

namespace {

// A -> B with B = A and P(A = 1) = p.
ScmModel copy_chain(double p) {
  ScmModel scm;
  scm.exogenous = {{"U", 2}};
  scm.p_u = {1.0 - p, p};
  scm.variables = {{"A", 2, {}, 0, {0, 1}}, {"B", 2, {0}, std::nullopt, {0, 1}}};
  return scm;
}

const Distribution& dist(const Answer& a) { return std::get<Distribution>(a); }

// Every variable's marginal CDF against the empirical CDF of a sample.
double kolmogorov_distance(const ScmModel& scm, const std::vector<std::vector<int>>& rows) {
  double worst = 0.0;
  for (std::size_t v = 0; v < scm.variables.size(); ++v) {
    const Distribution d = dist(eval_query(scm, ObservationalMarginal{{v}}));
    double cdf = 0.0;
    for (int value = 0; value < scm.variables[v].domain; ++value) {
      cdf += d.probs[static_cast<std::size_t>(value)];
      const double empirical =
          static_cast<double>(std::count_if(rows.begin(), rows.end(), [&](const auto& r) { return r[v] <= value; })) /
          static_cast<double>(rows.size());
      worst = std::max(worst, std::abs(empirical - cdf));
    }
  }
  return worst;
}

std::vector<std::size_t> sorted(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_SUITE("scmlab") {

TEST_CASE("copy chain marginals and interventions") {
  const ScmModel scm = copy_chain(0.7);
  const Distribution b = dist(eval_query(scm, ObservationalMarginal{{1}}));
  CHECK(b.probs == std::vector<double>{0.30000000000000004, 0.7});
  const Distribution do_b = dist(eval_query(scm, InterventionalMarginal{{{0, 0}}, {1}}));
  CHECK(do_b.probs == std::vector<double>{1.0, 0.0});
}

TEST_CASE("OR gate average effect is one half") {
  const CanonicalExample ex = canonical_example("overdetermined_or");
  // do(A=1): Y = 1 always. do(A=0): Y = B = U, so E[Y] = 0.5.
  CHECK(std::get<double>(eval_query(ex.scm, AverageEffect{0, 1, 0, 2})) == 0.5);
}

TEST_CASE("canonical examples match hand enumeration") {
  const ScmModel orgate = canonical_example("overdetermined_or").scm;
  CHECK(dist(eval_query(orgate, ObservationalMarginal{{2}})).probs == std::vector<double>{0.5, 0.5});
  CHECK(dist(eval_query(orgate, ObservationalMarginal{{0, 1}})).probs == std::vector<double>{0.5, 0, 0, 0.5});
  CHECK(dist(eval_query(orgate, InterventionalMarginal{{{0, 0}, {1, 0}}, {2}})).probs ==
        std::vector<double>{1.0, 0.0});

  // chain3: A ~ Bern(.7), B = A xor Bern(.2), C = B xor Bern(.1)
  const ScmModel chain = canonical_example("chain3").scm;
  const double pa[2] = {0.3, 0.7}, pb[2] = {0.8, 0.2}, pc[2] = {0.9, 0.1};
  const Distribution joint = dist(eval_query(chain, ObservationalMarginal{{0, 1, 2}}));
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c)
        CHECK(joint.probs[static_cast<std::size_t>(4 * a + 2 * b + c)] == pa[a] * pb[a ^ b] * pc[b ^ c]);
  const Distribution c_marg = dist(eval_query(chain, ObservationalMarginal{{2}}));
  CHECK(c_marg.probs[1] == doctest::Approx(0.62 * 0.9 + 0.38 * 0.1).epsilon(1e-15));
  const Distribution do_a0 = dist(eval_query(chain, InterventionalMarginal{{{0, 0}}, {1, 2}}));
  const std::vector<double> expected = {0.8 * 0.9, 0.8 * 0.1, 0.2 * 0.1, 0.2 * 0.9};
  for (std::size_t i = 0; i < 4; ++i) CHECK(do_a0.probs[i] == doctest::Approx(expected[i]).epsilon(1e-15));
  const Distribution do_b1 = dist(eval_query(chain, InterventionalMarginal{{{1, 1}}, {2}}));
  CHECK(do_b1.probs[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(do_b1.probs[1] == doctest::Approx(0.9).epsilon(1e-15));

  const ScmModel probe = canonical_example("underspecified_probe").scm;
  CHECK(dist(eval_query(probe, ObservationalMarginal{{0, 1}})).probs == std::vector<double>{0.4, 0, 0, 0.6});
  CHECK(dist(eval_query(probe, InterventionalMarginal{{{0, 0}}, {1}})).probs == std::vector<double>{1.0, 0.0});
}

TEST_CASE("marginals sum to one and intervened variables are point masses") {
  for (const auto& ex : canonical_examples()) {
    CHECK_NOTHROW(validate(ex.scm));
    const std::size_t d = ex.scm.variables.size();
    for (std::size_t v = 0; v < d; ++v) {
      const Distribution m = dist(eval_query(ex.scm, ObservationalMarginal{{v}}));
      double total = 0;
      for (double p : m.probs) total += p;
      CHECK(std::abs(total - 1.0) <= 1e-12);
      for (int value = 0; value < ex.scm.variables[v].domain; ++value) {
        for (std::size_t t = 0; t < d; ++t) {
          if (t == v) continue;
          const Distribution r = dist(eval_query(ex.scm, InterventionalMarginal{{{v, value}}, {v, t}}));
          const int dim_t = ex.scm.variables[t].domain;
          double mass_at_value = 0;
          for (int w = 0; w < dim_t; ++w) mass_at_value += r.probs[static_cast<std::size_t>(value * dim_t + w)];
          CHECK(mass_at_value == doctest::Approx(1.0).epsilon(1e-12));
        }
        const Distribution self = dist(eval_query(ex.scm, InterventionalMarginal{{{v, value}}, {v}}));
        CHECK(self.probs[static_cast<std::size_t>(value)] == 1.0);
      }
    }
  }
}

TEST_CASE("samples converge to exact marginals") {
  for (const auto& ex : canonical_examples()) {
    const std::size_t n = 10000;
    const auto rows = sample(ex.scm, n, 42);
    CHECK(kolmogorov_distance(ex.scm, rows) <= 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(sample(ex.scm, 50, 42) == sample(ex.scm, 50, 42));
  }
  const auto rows = sample(copy_chain(0.7), 10000, 9);
  double ones = 0;
  for (const auto& r : rows) ones += r[1];
  CHECK(std::abs(ones / 10000.0 - 0.7) <= 0.02);

  const auto forced = sample(canonical_example("chain3").scm, 100, 3, Intervention{{1, 1}});
  for (const auto& r : forced) CHECK(r[1] == 1);
}

TEST_CASE("point-mass exogenous distribution gives identical samples") {
  ScmModel scm = canonical_example("chain3").scm;
  scm.p_u.assign(scm.p_u.size(), 0.0);
  scm.p_u[5] = 1.0;
  const auto rows = sample(scm, 200, 1);
  for (const auto& r : rows) CHECK(r == rows.front());
}

TEST_CASE("model validation") {
  ScmModel scm = copy_chain(0.5);
  scm.variables[1].table = {0, 1, 1};
  CHECK_THROWS_AS(validate(scm), ValidationError);
  scm = copy_chain(0.5);
  scm.variables[1].table = {0, 2};
  CHECK_THROWS_AS(validate(scm), ValidationError);
  scm = copy_chain(0.5);
  scm.p_u = {0.5, 0.6};
  CHECK_THROWS_AS(validate(scm), ValidationError);
  scm = copy_chain(0.5);
  scm.variables[0].parents = {1};
  scm.variables[0].exogenous.reset();
  CHECK_THROWS_AS(validate(scm), ValidationError);
  scm = copy_chain(0.5);
  CHECK_THROWS_AS(validate(CausalQuery{InterventionalMarginal{{{0, 2}}, {1}}}, scm), ValidationError);
  CHECK_THROWS_AS(validate(CausalQuery{ObservationalMarginal{{4}}}, scm), ValidationError);
  CHECK_THROWS_AS(validate(QueryDistribution{{ObservationalMarginal{{1}}, 0.5}}, scm), ValidationError);
}

TEST_CASE("population risk examples") {
  const CanonicalExample ex = canonical_example("overdetermined_or");
  const Surrogate full = sub_circuit(ex.scm, edges(ex.scm));
  CHECK(population_risk(ex.task, full, ex.scm) == 0.0);

  // Keep only A -> Y; B is filled with its mode, 0 on the tie.
  const Surrogate only_a = sub_circuit(ex.scm, {Edge{0, 2}});
  CHECK(dist(surrogate_answer(only_a, ex.scm, ObservationalMarginal{{2}})).probs == std::vector<double>{0.5, 0.5});
  CHECK(population_risk(ex.task, only_a, ex.scm) == 0.0);

  // Neither edge: Y = OR(0, 0) = 0, TV from (.5, .5) is .5.
  const Surrogate none = sub_circuit(ex.scm, {});
  CHECK(population_risk(ex.task, none, ex.scm) == 0.5);

  // Point mass on the average effect: the A-only circuit claims 1, the system has 0.5.
  TaskSpec ae = ex.task;
  ae.mu = uniform_queries({AverageEffect{0, 1, 0, 2}});
  CHECK(population_risk(ae, only_a, ex.scm) == 0.5);
  CHECK(population_risk(ae, full, ex.scm) == 0.0);
}

TEST_CASE("sub-circuit fill policies") {
  const ScmModel chain = canonical_example("chain3").scm;
  // Mode of A is 1, so cutting A -> B feeds B the value 1 under kMode and 0 under kZero.
  const Surrogate mode_fill = sub_circuit(chain, {Edge{1, 2}}, FillPolicy::kMode);
  const Surrogate zero_fill = sub_circuit(chain, {Edge{1, 2}}, FillPolicy::kZero);
  const auto pb_mode = dist(surrogate_answer(mode_fill, chain, ObservationalMarginal{{1}})).probs;
  const auto pb_zero = dist(surrogate_answer(zero_fill, chain, ObservationalMarginal{{1}})).probs;
  CHECK(pb_mode[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(pb_zero[1] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(all_sub_circuits(chain).size() == 4);
  CHECK(all_sub_circuits(chain, 2).size() == 2);
}

TEST_CASE("identifiability claims") {
  for (const auto& ex : canonical_examples()) {
    const IdentifiabilityResult r = identifiability_check(ex.task, ex.scm, 0.0);
    CHECK(r.identifiable == ex.expected_identifiable);
    CHECK(r.min_risk == 0.0);
    for (double risk : r.risks) CHECK(risk >= 0.0);
  }
  const CanonicalExample orgate = canonical_example("overdetermined_or");
  const IdentifiabilityResult r = identifiability_check(orgate.task, orgate.scm, 0.0);
  CHECK(r.minimizers.size() >= 2);
  std::vector<std::string> names;
  for (std::size_t i : r.minimizers) names.push_back(orgate.task.surrogate_class[i].name);
  CHECK(std::find(names.begin(), names.end(), "subcircuit{A->Y}") != names.end());
  CHECK(std::find(names.begin(), names.end(), "subcircuit{B->Y}") != names.end());

  const CanonicalExample chain = canonical_example("chain3");
  const IdentifiabilityResult rc = identifiability_check(chain.task, chain.scm, 0.0);
  REQUIRE(rc.minimizers.size() == 1);
  CHECK(chain.task.surrogate_class[rc.minimizers[0]].name == "subcircuit{A->B,B->C}");
}

TEST_CASE("withheld interventional query restores identifiability") {
  CanonicalExample ex = canonical_example("underspecified_probe");
  REQUIRE(ex.withheld.has_value());
  for (double w : {0.5, 0.01}) {
    TaskSpec enriched = ex.task;
    enriched.mu = {{ex.task.mu[0].query, 1.0 - w}, {*ex.withheld, w}};
    const IdentifiabilityResult r = identifiability_check(enriched, ex.scm, 0.0);
    CHECK(r.identifiable);
    REQUIRE(r.minimizers.size() == 1);
    CHECK(enriched.surrogate_class[r.minimizers[0]].name == "full");
  }
}

TEST_CASE("infinite epsilon returns the whole class") {
  const CanonicalExample ex = canonical_example("chain3");
  const auto r = identifiability_check(ex.task, ex.scm, std::numeric_limits<double>::infinity());
  CHECK(r.minimizers.size() == ex.task.surrogate_class.size());
  CHECK_FALSE(r.identifiable);
  TaskSpec single = ex.task;
  single.surrogate_class.resize(1);
  CHECK(identifiability_check(single, ex.scm, std::numeric_limits<double>::infinity()).identifiable);
  single.surrogate_class.clear();
  CHECK_THROWS_AS(identifiability_check(single, ex.scm, 0.0), ValidationError);
}

TEST_CASE("an equivalence predicate can merge minimizers") {
  const CanonicalExample ex = canonical_example("overdetermined_or");
  const auto any = [](const Surrogate&, const Surrogate&) { return true; };
  CHECK(identifiability_check(ex.task, ex.scm, 0.0, any).identifiable);
}

TEST_CASE("enriching a realizable task only narrows the minimizer set") {
  // Holds when the true circuit is in the class, so every minimum is 0.
  const CanonicalExample ex = canonical_example("chain3");
  const std::size_t q = ex.task.mu.size();
  for (std::size_t base_mask = 1; base_mask < (1u << q); ++base_mask) {
    for (std::size_t extra = 1; extra < (1u << q); ++extra) {
      const std::size_t rich_mask = base_mask | extra;
      auto subset = [&](std::size_t mask) {
        std::vector<CausalQuery> qs;
        for (std::size_t i = 0; i < q; ++i)
          if (mask & (1u << i)) qs.push_back(ex.task.mu[i].query);
        TaskSpec t = ex.task;
        t.mu = uniform_queries(qs);
        return sorted(identifiability_check(t, ex.scm, 0.0).minimizers);
      };
      const auto base = subset(base_mask);
      const auto rich = subset(rich_mask);
      CHECK(std::includes(base.begin(), base.end(), rich.begin(), rich.end()));
    }
  }
}

TEST_CASE("abstract surrogate answers through its value map") {
  const CanonicalExample ex = canonical_example("underspecified_probe");
  const Surrogate& common = ex.task.surrogate_class[2];
  CHECK(dist(surrogate_answer(common, ex.scm, ObservationalMarginal{{0, 1}})).probs ==
        std::vector<double>{0.4, 0, 0, 0.6});
  // Y ignores do(X = 0) in the surrogate; the system follows X.
  CHECK(dist(surrogate_answer(common, ex.scm, InterventionalMarginal{{{0, 0}}, {1}})).probs ==
        std::vector<double>{0.4, 0.6});

  // Merge the OR gate's (A, B) into one binary "any input" variable.
  const ScmModel orgate = canonical_example("overdetermined_or").scm;
  ScmModel coarse;
  coarse.exogenous = {{"U", 2}};
  coarse.p_u = {0.5, 0.5};
  coarse.variables = {{"AB", 2, {}, 0, {0, 1}}, {"Y", 2, {0}, std::nullopt, {0, 1}}};
  const Surrogate merged = abstract_surrogate("merged", coarse, Abstraction{{{0, 1}, {2}}, {{0, 1, 1, 1}, {0, 1}}});
  CHECK_NOTHROW(validate(merged, orgate));
  TaskSpec task;
  task.mu = uniform_queries({ObservationalMarginal{{2}}});
  task.surrogate_class = {merged};
  CHECK(population_risk(task, merged, orgate) == 0.0);
  CHECK(dist(system_answer(orgate, merged, ObservationalMarginal{{0, 1}})).probs == std::vector<double>{0.5, 0.5});
}

TEST_CASE("empirical risk approaches population risk") {
  for (const auto& ex : canonical_examples()) {
    std::vector<CausalQuery> queries;
    for (const auto& wq : ex.task.mu) queries.push_back(wq.query);
    for (const auto& s : ex.task.surrogate_class) {
      const double pop = population_risk(ex.task, s, ex.scm);
      const double emp = empirical_risk(s, ex.scm, queries, 100000, 17);
      CHECK(std::abs(emp - pop) <= 0.01);
      CHECK(empirical_risk(s, ex.scm, queries, 1000, 3) == empirical_risk(s, ex.scm, queries, 1000, 3));
    }
  }
}

TEST_CASE("sampled queries follow the weights") {
  const ScmModel scm = copy_chain(0.5);
  const QueryDistribution mu = {{ObservationalMarginal{{0}}, 0.8}, {ObservationalMarginal{{1}}, 0.2}};
  const auto qs = sample_queries(mu, 5000, 2);
  const auto first = std::count_if(qs.begin(), qs.end(), [](const CausalQuery& q) {
    return std::get<ObservationalMarginal>(q).targets[0] == 0;
  });
  CHECK(std::abs(static_cast<double>(first) / 5000.0 - 0.8) < 0.03);
}

}

TEST_SUITE("scm_json") {

TEST_CASE("canonical models round trip") {
  for (const auto& ex : canonical_examples()) {
    const ScmModel back = scm_from_json(nlohmann::json::parse(scm_to_json(ex.scm).dump()));
    CHECK(scm_to_json(back) == scm_to_json(ex.scm));
    for (const auto& wq : ex.task.mu) {
      const CausalQuery q = query_from_json(query_to_json(wq.query, ex.scm), ex.scm, "q");
      CHECK(discrepancy(eval_query(back, q), eval_query(ex.scm, wq.query)) == 0.0);
    }
  }
}

TEST_CASE("task with enumerated sub-circuits") {
  const ScmModel scm = canonical_example("overdetermined_or").scm;
  const TaskSpec task = task_from_json(nlohmann::json::parse(R"({
    "name": "or",
    "queries": [{"type": "observational", "targets": ["Y"]}],
    "surrogates": {"enumerate": "sub_circuits", "child": "Y", "fill": "zero"}
  })"), scm);
  CHECK(task.surrogate_class.size() == 4);
  const auto r = identifiability_check(task, scm, 0.0);
  CHECK_FALSE(r.identifiable);
  const nlohmann::json report = identifiability_to_json(task, scm, r, 0.0);
  CHECK(report.at("identifiable") == false);
}

TEST_CASE("malformed JSON errors name the path") {
  auto message = [](const std::string& text) {
    try {
      scm_from_json(nlohmann::json::parse(text));
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message(R"({"exogenous": [{"name": "U", "domain": 2, "probs": [0.5, 0.5]}],
    "variables": [{"name": "A", "domain": 2, "exogenous": "U", "table": [0, 1]},
                  {"name": "B", "domain": 2, "exogenous": "U", "table": [0, 1]},
                  {"name": "Y", "domain": 2, "parents": ["A", "B"], "table": [0, 1, 1]}]})")
            .find("scm.variables[2].table: expected 4 entries, got 3") != std::string::npos);
  CHECK(message(R"({"exogenous": [], "variables": [{"name": "A", "domain": 2, "parents": ["Z"], "table": [0, 1]}]})")
            .find("scm.variables[0].parents") != std::string::npos);
  CHECK(message(R"({"exogenous": [], "variables": [], "colour": 1})").find("colour") != std::string::npos);
  const std::string bad_probs = message(R"({"exogenous": [{"name": "U", "domain": 2, "probs": [0.5, 0.4]}],
    "variables": [{"name": "A", "domain": 2, "exogenous": "U", "table": [0, 1]}]})");
  CHECK(bad_probs.rfind("scm", 0) == 0);
  CHECK(bad_probs.find("sum") != std::string::npos);
  CHECK(message(R"({"exogenous": [], "variables": []})") == "scm: no variables");
}

}
