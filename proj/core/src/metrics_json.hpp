#pragma once

#include <span>
#include <string>

#include <json.hpp>

#include "canopy/metrics.hpp"

namespace canopy::metrics {

inline constexpr const char* kReportSchema = "canopy.evaluation/1";

nlohmann::ordered_json report_to_json(const ConfusionMatrix& cm, const EvaluationReport& r,
                                      std::span<const std::string> class_names);

}  // namespace canopy::metrics
