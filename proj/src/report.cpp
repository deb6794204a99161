#include "refmatch/report.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>

#include "refmatch/io.hpp"

namespace refmatch {

namespace {

std::string csv_report(const MetricReport& report) {
    std::string out = "metric,label,value\n";
    auto row = [&out](const char* metric, const std::string& label, double value) {
        out += metric;
        out += ',';
        out += label;
        out += ',';
        out += format_double(value);
        out += '\n';
    };
    for (const auto& [label, m] : report.per_label) {
        row("dice", label, m.dice);
        row("giou", label, m.giou);
        row("iou", label, m.iou);
        row("ap", label, m.ap);
    }
    row("mean_dice", "all", report.mean_dice);
    row("mean_giou", "all", report.mean_giou);
    row("accuracy", "all", report.accuracy);
    return out;
}

std::string table_report(const MetricReport& report) {
    std::size_t label_width = 5;  // "label"
    for (const auto& [label, m] : report.per_label) {
        label_width = std::max(label_width, label.size());
    }
    char line[256];
    std::string out;
    std::snprintf(line, sizeof(line), "%-*s  %10s  %10s  %10s  %10s\n",
                  static_cast<int>(label_width), "label", "dice", "giou", "iou", "ap");
    out += line;
    for (const auto& [label, m] : report.per_label) {
        std::snprintf(line, sizeof(line), "%-*s  %10.4f  %10.4f  %10.4f  %10.4f\n",
                      static_cast<int>(label_width), label.c_str(), m.dice, m.giou, m.iou, m.ap);
        out += line;
    }
    std::snprintf(line, sizeof(line),
                  "%-*s  mean_dice=%.4f  mean_giou=%.4f  accuracy=%.4f\n",
                  static_cast<int>(label_width), "all", report.mean_dice, report.mean_giou,
                  report.accuracy);
    out += line;
    return out;
}

}  // namespace

std::string write_report(const MetricReport& report, ReportFormat format) {
    switch (format) {
        case ReportFormat::Json:
            return dump_json(report_to_json(report));
        case ReportFormat::Csv:
            return csv_report(report);
        case ReportFormat::Table:
            return table_report(report);
    }
    return {};
}

std::string svg_scatter(std::span<const std::pair<double, double>> points,
                        const std::string& x_label, const std::string& y_label) {
    constexpr int kWidth = 480, kHeight = 320, kMargin = 48;
    double x_min = 0.0, x_max = 1e-9, y_min = 0.0, y_max = 1.0;
    for (const auto& [x, y] : points) {
        x_max = std::max(x_max, x);
    }
    auto sx = [&](double x) {
        return kMargin + (x - x_min) / (x_max - x_min) * (kWidth - 2 * kMargin);
    };
    auto sy = [&](double y) {
        return kHeight - kMargin - (y - y_min) / (y_max - y_min) * (kHeight - 2 * kMargin);
    };
    std::string svg =
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(kWidth) +
        "\" height=\"" + std::to_string(kHeight) + "\">\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "  <line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                  kMargin, kHeight - kMargin, kWidth - kMargin, kHeight - kMargin);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "  <line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                  kMargin, kMargin, kMargin, kHeight - kMargin);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "  <text x=\"%d\" y=\"%d\" font-size=\"12\">%s</text>\n", kWidth / 2 - 30,
                  kHeight - 12, x_label.c_str());
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "  <text x=\"12\" y=\"%d\" font-size=\"12\" transform=\"rotate(-90 12 %d)\">%s"
                  "</text>\n",
                  kHeight / 2, kHeight / 2, y_label.c_str());
    svg += buf;
    for (const auto& [x, y] : points) {
        std::snprintf(buf, sizeof(buf),
                      "  <circle cx=\"%.2f\" cy=\"%.2f\" r=\"4\" fill=\"steelblue\"/>\n", sx(x),
                      sy(y));
        svg += buf;
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace refmatch
