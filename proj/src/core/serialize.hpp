#pragma once
#include <json.hpp>
#include <string>

#include "core/dataset.hpp"
#include "core/epbr.hpp"
#include "core/estimate.hpp"
#include "core/methods.hpp"
#include "core/tune.hpp"

namespace gom {

// JSON has no inf/nan literals; nonfinite doubles serialize as strings.
nlohmann::json number_or_string(double v);

nlohmann::json solution_json(const GomSolution& sol);
nlohmann::json report_json(const EstimateReport& rep);
nlohmann::json hyper_json(const GpHyper& h);
nlohmann::json epbr_json(const EpbrReport& rep);

// Per-unit weights, one row per unit: unit_id,weight. Treated units carry the
// 1/n1 convention used by the estimators.
std::string weights_csv(const Dataset& ds, const GomSolution& sol);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& content);

// Strict parse with a friendly error.
nlohmann::json parse_json(const std::string& text, const std::string& what);

}  // namespace gom
