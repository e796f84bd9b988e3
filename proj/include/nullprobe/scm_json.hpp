#pragma once

// JSON form of SCMs, tasks and identifiability results.
//
// scm:  {"exogenous": [{"name", "domain", "probs"?}], "joint"?: [..],
//        "variables": [{"name", "domain", "parents"?: [names], "exogenous"?: name, "table": [..]}]}
//       Exogenous variables are independent with their "probs" unless "joint"
//       gives the full table (mixed radix, first exogenous variable most
//       significant); exactly one of the two forms is allowed.
// task: {"name"?, "queries": [query], "surrogates": [surrogate] | {"enumerate": "sub_circuits",
//        "child"?: name, "fill"?: "mode"|"zero"}}
// query: {"type": "observational", "targets": [..]}
//      | {"type": "interventional", "do": {name: value}, "targets": [..]}
//      | {"type": "average_effect", "treatment", "x1", "x0", "outcome"}
//      each with an optional "weight"; all weights or none (uniform).
// surrogate: {"kind": "sub_circuit", "name"?, "edges": [[parent, child]], "fill"?}
//          | {"kind": "abstract", "name", "scm": scm, "groups": [{"variables": [..], "value_map": [..]}]}
//
// Malformed input raises ValidationError naming the JSON path.

#include "nullprobe/scmlab.hpp"

#include <nlohmann/json.hpp>

#include <string>

namespace nullprobe {

ScmModel scm_from_json(const nlohmann::json& j, const std::string& path = "scm");
nlohmann::json scm_to_json(const ScmModel& scm);

CausalQuery query_from_json(const nlohmann::json& j, const ScmModel& scm, const std::string& path);
nlohmann::json query_to_json(const CausalQuery& query, const ScmModel& scm);

TaskSpec task_from_json(const nlohmann::json& j, const ScmModel& scm, const std::string& path = "task");

nlohmann::json answer_to_json(const Answer& answer, const ScmModel& space);

nlohmann::json identifiability_to_json(const TaskSpec& task, const ScmModel& scm, const IdentifiabilityResult& result,
                                       double epsilon);

}  // namespace nullprobe
