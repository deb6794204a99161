#pragma once

#include <span>
#include <string>
#include <utility>

#include "refmatch/metrics.hpp"

namespace refmatch {

enum class ReportFormat { Json, Csv, Table };

/// Deterministic rendering of a report. CSV uses the header
/// "metric,label,value" with aggregates under the label "all"; the table
/// format prints per-label rows followed by the aggregate row.
std::string write_report(const MetricReport& report, ReportFormat format);

/// Minimal SVG scatter for (noise sigma, accuracy) series.
std::string svg_scatter(std::span<const std::pair<double, double>> points,
                        const std::string& x_label, const std::string& y_label);

}  // namespace refmatch
