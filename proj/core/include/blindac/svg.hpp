#pragma once

#include <string>
#include <vector>

namespace blindac {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Minimal deterministic SVG renderers for the report plots. NaN points split
// the polyline.
std::string render_line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<Series>& series);

std::string render_heatmap(const std::string& title,
                           const std::vector<std::string>& row_labels,
                           const std::vector<std::string>& col_labels,
                           const std::vector<std::vector<double>>& values);

void write_file(const std::string& path, const std::string& content);

}  // namespace blindac
