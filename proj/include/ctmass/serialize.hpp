#pragma once

// JSON records for transforms, configs, fitted models and selection results,
// plus the CSV tables emitted alongside them.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctmass/bspline.hpp"
#include "ctmass/features.hpp"
#include "ctmass/registration.hpp"
#include "ctmass/regress.hpp"
#include "ctmass/selection.hpp"
#include "ctmass/stats.hpp"

namespace ctmass {

using json = nlohmann::ordered_json;

json to_json(const Geometry& g);
Geometry geometry_from_json(const json& j);

// {domain, grid_origin, grid_spacing, grid_dims, displacements, config?}
json to_json(const BSplineTransform& t);
BSplineTransform transform_from_json(const json& j);

json to_json(const RegistrationConfig& c);
RegistrationConfig registration_config_from_json(const json& j, RegistrationConfig base = {});
json to_json(const HistogramSpec& h);
HistogramSpec histogram_from_json(const json& j, HistogramSpec base = {});
json to_json(const CVProtocol& p);
CVProtocol protocol_from_json(const json& j, CVProtocol base = {});
json to_json(const AnnealingSchedule& s);
AnnealingSchedule schedule_from_json(const json& j, AnnealingSchedule base = {});

json to_json(const RegressorSpec& s);
RegressorSpec spec_from_json(const json& j);

// Column names are stored next to indices so the model can be checked
// against the feature layout it is applied to.
json to_json(const FittedModel& m, std::span<const std::string> column_names);
FittedModel model_from_json(const json& j);

json to_json(const SelectionResult& r, std::span<const std::string> column_names);
json to_json(const WilcoxonOutcome& w);

void write_json(const json& j, const std::filesystem::path& path);
json read_json(const std::filesystem::path& path);

// iteration,score,temperature,accepted,new_best,failed
void write_trace_csv(const SelectionResult& r, const std::filesystem::path& path);

// 17 significant digits; "-inf" / "nan" spelled out.
std::string format_double(double v);

} // namespace ctmass
