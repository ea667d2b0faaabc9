#pragma once

// Flat CSV tables and self-contained SVG plots built from RunRecords.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gemlab/record.hpp"

namespace gemlab {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    friend bool operator==(const CsvTable&, const CsvTable&) = default;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);

/// RFC 4180 style: fields with commas, quotes or newlines are quoted.
std::string emit_csv(const CsvTable& table);
CsvTable parse_csv(std::string_view text);

/// One row per (run, metric, value), metrics in name order.
CsvTable metrics_table(const RunRecord& record);

enum class ReportKind { SUMMARY_CSV, PASS_AT_K_CURVE, ENTROPY_TABLE, DISTANCE_CURVE };

std::string_view to_string(ReportKind k);
ReportKind parse_report_kind(std::string_view s);

/// Builds the table for `kind` from the successful records. PASS_AT_K_CURVE
/// throws PreconditionError if any series decreases in k.
CsvTable report_table(std::span<const RunRecord> records, ReportKind kind);

struct ReportFiles {
    std::filesystem::path csv;
    std::optional<std::filesystem::path> svg;
};

/// Writes <dir>/<kind>.csv, and <dir>/<kind>.svg when `svg` is set.
ReportFiles report(std::span<const RunRecord> records, ReportKind kind, const std::filesystem::path& dir,
                   bool svg);

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

std::string svg_line_chart(std::string_view title, std::string_view x_label, std::string_view y_label,
                           std::span<const Series> series);
std::string svg_bar_chart(std::string_view title, std::span<const std::string> labels,
                          std::span<const double> values);

}  // namespace gemlab
