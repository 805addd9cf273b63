#include "dim/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace dim {

namespace {

constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string header(const std::string& title) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
                    "font-family=\"sans-serif\" font-size=\"12\">\n"
                    "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) + "</text>\n";
    return s;
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (!(x1 >= x0)) x0 = 0, x1 = 1;
    if (!(y1 >= y0)) y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::string s = header(title);
    s += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double yv = y0 + (y1 - y0) * k / 4.0;
        s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(py(yv) + 4) + "\" text-anchor=\"end\">" + num(yv) +
             "</text>\n";
        const double xv = x0 + (x1 - x0) * k / 4.0;
        s += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(kTop + ph + 16) + "\" text-anchor=\"middle\">" + num(xv) +
             "</text>\n";
    }
    s += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kH - 18) + "\" text-anchor=\"middle\">" +
         escape(x_label) + "</text>\n";
    s += "<text x=\"16\" y=\"" + num(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num(kTop + ph / 2) + ")\">" + escape(y_label) + "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& ser = series[k];
        const char* color = kColors[k % (sizeof kColors / sizeof kColors[0])];
        std::string pts;
        for (std::size_t i = 0; i < ser.x.size() && i < ser.y.size(); ++i) {
            if (!std::isfinite(ser.y[i])) continue;
            pts += num(px(ser.x[i])) + "," + num(py(ser.y[i])) + " ";
        }
        s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts +
             "\"/>\n";
        s += "<text x=\"" + num(kLeft + pw - 4) + "\" y=\"" + num(kTop + 16 + 14 * double(k)) +
             "\" text-anchor=\"end\" fill=\"" + color + "\">" + escape(ser.label) + "</text>\n";
    }
    return s + "</svg>\n";
}

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values) {
    double top = 0.0;
    for (double v : values) {
        if (std::isfinite(v)) top = std::max(top, v);
    }
    if (top <= 0.0) top = 1.0;
    const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
    const double slot = values.empty() ? pw : pw / double(values.size());
    std::string s = header(title);
    s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop + ph) + "\" x2=\"" + num(kLeft + pw) + "\" y2=\"" +
         num(kTop + ph) + "\" stroke=\"#444\"/>\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = std::isfinite(values[i]) ? std::max(0.0, values[i]) : 0.0;
        const double h = v / top * ph;
        const double x = kLeft + slot * double(i) + slot * 0.15;
        s += "<rect x=\"" + num(x) + "\" y=\"" + num(kTop + ph - h) + "\" width=\"" + num(slot * 0.7) +
             "\" height=\"" + num(h) + "\" fill=\"" + kColors[i % (sizeof kColors / sizeof kColors[0])] + "\"/>\n";
        s += "<text x=\"" + num(x + slot * 0.35) + "\" y=\"" + num(kTop + ph - h - 4) +
             "\" text-anchor=\"middle\">" + num(values[i]) + "</text>\n";
        const std::string label = i < labels.size() ? labels[i] : "";
        s += "<text x=\"" + num(x + slot * 0.35) + "\" y=\"" + num(kTop + ph + 16) + "\" text-anchor=\"middle\">" +
             escape(label) + "</text>\n";
    }
    return s + "</svg>\n";
}

}  // namespace dim
