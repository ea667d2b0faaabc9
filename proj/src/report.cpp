#include "gemlab/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "gemlab/errors.hpp"

namespace gemlab {

namespace {

bool needs_quotes(std::string_view field) {
    return field.find_first_of(",\"\r\n") != std::string_view::npos;
}

void append_field(std::string& out, std::string_view field) {
    if (!needs_quotes(field)) {
        out += field;
        return;
    }
    out.push_back('"');
    for (char c : field) {
        if (c == '"') {
            out.push_back('"');
        }
        out.push_back(c);
    }
    out.push_back('"');
}

void append_row(std::string& out, const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i > 0) {
            out.push_back(',');
        }
        append_field(out, row[i]);
    }
    out.push_back('\n');
}

std::string xml_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::vector<const RunRecord*> successful(std::span<const RunRecord> records) {
    std::vector<const RunRecord*> out;
    for (const auto& r : records) {
        if (r.status == "ok") {
            out.push_back(&r);
        }
    }
    return out;
}

double metric_or_nan(const RunRecord& r, const std::string& name) {
    const auto it = r.final_metrics.find(name);
    return it == r.final_metrics.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw InvalidInput("not a number: '" + std::string(s) + "'");
    }
    return v;
}

std::string emit_csv(const CsvTable& table) {
    std::string out;
    append_row(out, table.header);
    for (const auto& row : table.rows) {
        if (row.size() != table.header.size()) {
            throw InvalidInput("emit_csv: row width does not match header");
        }
        append_row(out, row);
    }
    return out;
}

CsvTable parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool row_open = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        row_open = true;
        if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
                ++i;
            }
            row.push_back(std::move(field));
            field.clear();
            rows.push_back(std::move(row));
            row.clear();
            row_open = false;
        } else {
            field.push_back(c);
        }
    }
    if (quoted) {
        throw InvalidInput("parse_csv: unterminated quoted field");
    }
    if (row_open) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        throw InvalidInput("parse_csv: missing header");
    }
    CsvTable table;
    table.header = std::move(rows.front());
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != table.header.size()) {
            throw InvalidInput("parse_csv: row " + std::to_string(i) + " has the wrong number of fields");
        }
        table.rows.push_back(std::move(rows[i]));
    }
    return table;
}

CsvTable metrics_table(const RunRecord& record) {
    CsvTable t{{"run", "metric", "value"}, {}};
    for (const auto& [name, value] : record.final_metrics) {
        t.rows.push_back({record.cell, name, format_double(value)});
    }
    return t;
}

std::string_view to_string(ReportKind k) {
    switch (k) {
        case ReportKind::SUMMARY_CSV: return "summary-csv";
        case ReportKind::PASS_AT_K_CURVE: return "pass-at-k-curve";
        case ReportKind::ENTROPY_TABLE: return "entropy-table";
        case ReportKind::DISTANCE_CURVE: return "distance-curve";
    }
    return "?";
}

ReportKind parse_report_kind(std::string_view s) {
    for (auto k : {ReportKind::SUMMARY_CSV, ReportKind::PASS_AT_K_CURVE, ReportKind::ENTROPY_TABLE,
                   ReportKind::DISTANCE_CURVE}) {
        if (to_string(k) == s) {
            return k;
        }
    }
    throw InvalidParameter("unknown report kind '" + std::string(s) + "'");
}

CsvTable report_table(std::span<const RunRecord> records, ReportKind kind) {
    if (records.empty()) {
        throw InvalidInput("report: no records");
    }
    const auto ok = successful(records);
    CsvTable t;
    switch (kind) {
        case ReportKind::SUMMARY_CSV:
            t.header = {"run", "metric", "value"};
            for (const RunRecord* r : ok) {
                auto part = metrics_table(*r);
                t.rows.insert(t.rows.end(), part.rows.begin(), part.rows.end());
            }
            break;
        case ReportKind::PASS_AT_K_CURVE:
            t.header = {"run", "k", "pass_at_k"};
            for (const RunRecord* r : ok) {
                const auto ks = r->curves.find("pass_at_k_k");
                const auto vs = r->curves.find("pass_at_k");
                if (ks == r->curves.end() || vs == r->curves.end() || ks->second.size() != vs->second.size()) {
                    throw PreconditionError("record '" + r->cell + "' has no pass@k curve");
                }
                for (std::size_t i = 0; i < vs->second.size(); ++i) {
                    if (i > 0 && vs->second[i] < vs->second[i - 1]) {
                        throw PreconditionError("pass@k curve of '" + r->cell + "' decreases at k=" +
                                                format_double(ks->second[i]));
                    }
                    t.rows.push_back({r->cell, format_double(ks->second[i]), format_double(vs->second[i])});
                }
            }
            break;
        case ReportKind::ENTROPY_TABLE:
            t.header = {"run", "loss", "entropy", "self_bleu_diversity", "ngram_diversity"};
            for (const RunRecord* r : ok) {
                t.rows.push_back({r->cell, r->loss, format_double(metric_or_nan(*r, "entropy")),
                                  format_double(metric_or_nan(*r, "self_bleu_diversity")),
                                  format_double(metric_or_nan(*r, "ngram_diversity"))});
            }
            break;
        case ReportKind::DISTANCE_CURVE:
            t.header = {"run", "step", "param_distance"};
            for (const RunRecord* r : ok) {
                for (const auto& s : r->steps) {
                    t.rows.push_back({r->cell, std::to_string(s.step), format_double(s.param_distance)});
                }
            }
            break;
    }
    return t;
}

ReportFiles report(std::span<const RunRecord> records, ReportKind kind, const std::filesystem::path& dir,
                   bool svg) {
    const CsvTable table = report_table(records, kind);
    std::filesystem::create_directories(dir);
    ReportFiles files;
    files.csv = dir / (std::string(to_string(kind)) + ".csv");
    {
        std::ofstream out(files.csv, std::ios::binary);
        out << emit_csv(table);
        if (!out) {
            throw std::runtime_error("cannot write " + files.csv.string());
        }
    }
    if (!svg || kind == ReportKind::SUMMARY_CSV) {
        return files;
    }

    std::string doc;
    if (kind == ReportKind::ENTROPY_TABLE) {
        std::vector<std::string> labels;
        std::vector<double> values;
        for (const auto& row : table.rows) {
            labels.push_back(row[0]);
            values.push_back(parse_double(row[2]));
        }
        doc = svg_bar_chart("mean conditional entropy (nats)", labels, values);
    } else {
        std::vector<Series> series;
        for (const auto& row : table.rows) {
            if (series.empty() || series.back().name != row[0]) {
                series.push_back({row[0], {}, {}});
            }
            series.back().x.push_back(parse_double(row[1]));
            series.back().y.push_back(parse_double(row[2]));
        }
        doc = kind == ReportKind::PASS_AT_K_CURVE ? svg_line_chart("pass@k vs k", "k", "pass@k", series)
                                                  : svg_line_chart("distance from init", "step", "l2 distance", series);
    }
    files.svg = dir / (std::string(to_string(kind)) + ".svg");
    std::ofstream out(*files.svg, std::ios::binary);
    out << doc;
    if (!out) {
        throw std::runtime_error("cannot write " + files.svg->string());
    }
    return files;
}

std::string svg_line_chart(std::string_view title, std::string_view x_label, std::string_view y_label,
                           std::span<const Series> series) {
    constexpr double W = 640, H = 400, L = 60, R = 150, T = 40, B = 50;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        for (double v : s.x) {
            x0 = std::min(x0, v);
            x1 = std::max(x1, v);
        }
        for (double v : s.y) {
            if (std::isfinite(v)) {
                y0 = std::min(y0, v);
                y1 = std::max(y1, v);
            }
        }
    }
    if (!(x0 <= x1)) {
        x0 = 0, x1 = 1;
    }
    if (!(y0 <= y1)) {
        y0 = 0, y1 = 1;
    }
    if (x1 == x0) {
        x1 = x0 + 1;
    }
    if (y1 == y0) {
        y1 = y0 + 1;
    }
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
       << "</text>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4.0;
        const double yv = y0 + (y1 - y0) * i / 4.0;
        os << "<text x=\"" << num(px(xv)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
           << tick_label(xv) << "</text>\n";
        os << "<text x=\"" << L - 6 << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << tick_label(yv)
           << "</text>\n";
    }
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
       << xml_escape(x_label) << "</text>\n";
    os << "<text x=\"14\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
       << (T + H - B) / 2 << ")\">" << xml_escape(y_label) << "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        const char* color = kPalette[i % std::size(kPalette)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t j = 0; j < s.x.size() && j < s.y.size(); ++j) {
            if (std::isfinite(s.y[j])) {
                os << num(px(s.x[j])) << ',' << num(py(s.y[j])) << ' ';
            }
        }
        os << "\"/>\n";
        const double ly = T + 18.0 * static_cast<double>(i);
        os << "<rect x=\"" << W - R + 10 << "\" y=\"" << num(ly) << "\" width=\"12\" height=\"12\" fill=\"" << color
           << "\"/>\n";
        os << "<text x=\"" << W - R + 28 << "\" y=\"" << num(ly + 10) << "\">" << xml_escape(s.name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string svg_bar_chart(std::string_view title, std::span<const std::string> labels,
                          std::span<const double> values) {
    if (labels.size() != values.size()) {
        throw InvalidInput("svg_bar_chart: labels and values differ in length");
    }
    constexpr double W = 640, H = 400, L = 60, R = 20, T = 40, B = 60;
    double lo = 0.0, hi = 0.0;
    for (double v : values) {
        if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (hi == lo) {
        hi = lo + 1;
    }
    auto py = [&](double y) { return H - B - (y - lo) / (hi - lo) * (H - T - B); };
    const double slot = (W - L - R) / static_cast<double>(std::max<std::size_t>(values.size(), 1));

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
       << "</text>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << num(py(0)) << "\" x2=\"" << W - R << "\" y2=\"" << num(py(0))
       << "\" stroke=\"black\"/>\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = std::isfinite(values[i]) ? values[i] : 0.0;
        const double x = L + slot * static_cast<double>(i) + slot * 0.15;
        const double top = std::min(py(v), py(0));
        const double h = std::abs(py(v) - py(0));
        os << "<rect x=\"" << num(x) << "\" y=\"" << num(top) << "\" width=\"" << num(slot * 0.7) << "\" height=\""
           << num(h) << "\" fill=\"" << (v >= 0 ? kPalette[0] : kPalette[1]) << "\"/>\n";
        os << "<text x=\"" << num(x + slot * 0.35) << "\" y=\"" << num(top - 4) << "\" text-anchor=\"middle\">"
           << tick_label(values[i]) << "</text>\n";
        os << "<text x=\"" << num(x + slot * 0.35) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
           << xml_escape(labels[i]) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace gemlab
