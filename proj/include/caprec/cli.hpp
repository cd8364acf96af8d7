#pragma once

// Command-line front end: CSV ingestion, the estimate report and the
// simulate / catalog commands. `run` is what tools/caprec calls.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "caprec/capture_core.hpp"
#include "caprec/closed_form.hpp"
#include "caprec/simulation.hpp"

namespace caprec::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitInternal = 3;

inline constexpr const char* kReportVersion = "1";

enum class InputFormat { Records, Cells };

// Record CSV: header s1..sK, one 0/1 row per individual.
// Cell CSV: header pattern,count with patterns written b_1 first.
// Blank lines and lines starting with '#' are skipped. Errors carry the line number.
CellTable read_records_csv(std::istream& in);
CellTable read_cells_csv(std::istream& in);
CellTable read_table(const std::string& path, InputFormat format);

void write_cells_csv(std::ostream& out, const CellTable& table);

std::string pattern_string(PatternIndex index, int K);

struct RunConfig {
    std::vector<Assumption> assumptions{Assumption::LinearKWay, Assumption::Independence,
                                        Assumption::CondIndependence, Assumption::LogLinearKWay};
    std::vector<EstimatorKind> loglinear{EstimatorKind::Npmle, EstimatorKind::Lasso,
                                         EstimatorKind::Tmle, EstimatorKind::M0, EstimatorKind::Mt};
    EstimatorSettings settings{};
    double level = kDefaultLevel;
};

// One row per requested estimator; failures become rows with an error entry.
nlohmann::json estimate_report(const CellTable& table, const RunConfig& config);

std::string render_report(const nlohmann::json& report);
std::string render_metrics(const McResult& result);
std::string render_catalog(const std::vector<Scenario>& scenarios);
nlohmann::json catalog_json(const std::vector<Scenario>& scenarios);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace caprec::cli
