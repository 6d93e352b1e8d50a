#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ddtr/experiment.hpp"

namespace ddtr {

/// Config fields, then mean and sd of each metric, then params, madds, seconds.
std::vector<std::string> csv_header();
std::string rows_to_csv(const std::vector<ResultRow>& rows);
std::string rows_to_json(const std::vector<ResultRow>& rows);
std::vector<ResultRow> rows_from_json(const std::string& text);

/// Plot-data file name → contents; one "x mean sd" file per axis and metric.
std::map<std::string, std::string> plot_files(const std::vector<ResultRow>& rows);

/// Writes results.csv, results.json and plots/*.dat under directory.
void write_report(const std::vector<ResultRow>& rows, const std::filesystem::path& directory);

/// Shortest text that parses back to the same double; "NA" for empty values.
std::string format_number(double v);

}  // namespace ddtr
