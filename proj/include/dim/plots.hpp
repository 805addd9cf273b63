#pragma once

#include <string>
#include <vector>

namespace dim {

struct Series {
    std::string label;
    std::vector<double> x, y;
};

// Self-contained SVG documents (no imaging dependency).
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values);

}  // namespace dim
