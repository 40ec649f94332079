#include "blindac/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace blindac {

namespace {

constexpr int kWidth = 720;
constexpr int kHeight = 440;
constexpr int kMarginL = 70;
constexpr int kMarginR = 20;
constexpr int kMarginT = 40;
constexpr int kMarginB = 55;

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string num(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    bool valid() const { return lo <= hi; }
    void pad() {
        if (!valid()) {
            lo = 0.0;
            hi = 1.0;
        } else if (lo == hi) {
            lo -= 0.5;
            hi += 0.5;
        }
    }
};

}  // namespace

std::string render_line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<Series>& series) {
    Range xr, yr;
    for (const Series& s : series) {
        for (double v : s.x) xr.add(v);
        for (double v : s.y) yr.add(v);
    }
    xr.pad();
    yr.pad();

    const double pw = kWidth - kMarginL - kMarginR;
    const double ph = kHeight - kMarginT - kMarginB;
    auto sx = [&](double x) { return kMarginL + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
    auto sy = [&](double y) {
        return kMarginT + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph;
    };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
       << "\" height=\"" << kHeight << "\" font-family=\"sans-serif\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
          "font-size=\"15\">"
       << escape(title) << "</text>\n";

    // Axes and gridlines with 5 divisions.
    os << "<g stroke=\"#cccccc\" stroke-width=\"1\">\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
        const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
        os << "<line x1=\"" << num(sx(fx)) << "\" y1=\"" << kMarginT << "\" x2=\""
           << num(sx(fx)) << "\" y2=\"" << kMarginT + ph << "\"/>\n";
        os << "<line x1=\"" << kMarginL << "\" y1=\"" << num(sy(fy)) << "\" x2=\""
           << kMarginL + pw << "\" y2=\"" << num(sy(fy)) << "\"/>\n";
    }
    os << "</g>\n";
    os << "<g font-size=\"11\" fill=\"#333333\">\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
        const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
        std::ostringstream lx, ly;
        lx.precision(4);
        lx << fx;
        ly.precision(4);
        ly << fy;
        os << "<text x=\"" << num(sx(fx)) << "\" y=\"" << kMarginT + ph + 16
           << "\" text-anchor=\"middle\">" << lx.str() << "</text>\n";
        os << "<text x=\"" << kMarginL - 6 << "\" y=\"" << num(sy(fy) + 4)
           << "\" text-anchor=\"end\">" << ly.str() << "</text>\n";
    }
    os << "</g>\n";
    os << "<text x=\"" << kMarginL + pw / 2 << "\" y=\"" << kHeight - 12
       << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(x_label)
       << "</text>\n";
    os << "<text x=\"18\" y=\"" << kMarginT + ph / 2
       << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 18 "
       << kMarginT + ph / 2 << ")\">" << escape(y_label) << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        const char* color = kPalette[si % 8];
        std::ostringstream pts;
        bool open = false;
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
                if (open) {
                    os << "<polyline fill=\"none\" stroke=\"" << color
                       << "\" stroke-width=\"1.5\" points=\"" << pts.str()
                       << "\"/>\n";
                    pts.str("");
                    open = false;
                }
                continue;
            }
            pts << num(sx(s.x[i])) << ',' << num(sy(s.y[i])) << ' ';
            open = true;
        }
        if (open)
            os << "<polyline fill=\"none\" stroke=\"" << color
               << "\" stroke-width=\"1.5\" points=\"" << pts.str() << "\"/>\n";

        // Legend entry
        const double ly = kMarginT + 8 + 16.0 * double(si);
        os << "<line x1=\"" << kMarginL + pw - 150 << "\" y1=\"" << num(ly)
           << "\" x2=\"" << kMarginL + pw - 125 << "\" y2=\"" << num(ly)
           << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << kMarginL + pw - 120 << "\" y=\"" << num(ly + 4)
           << "\" font-size=\"11\">" << escape(s.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string render_heatmap(const std::string& title,
                           const std::vector<std::string>& row_labels,
                           const std::vector<std::string>& col_labels,
                           const std::vector<std::vector<double>>& values) {
    const std::size_t rows = values.size();
    const std::size_t cols = rows > 0 ? values[0].size() : 0;
    Range vr;
    for (const auto& row : values)
        for (double v : row) vr.add(v);
    vr.pad();

    const double cell_w = (kWidth - kMarginL - kMarginR) / double(std::max<std::size_t>(cols, 1));
    const double cell_h = (kHeight - kMarginT - kMarginB) / double(std::max<std::size_t>(rows, 1));

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
       << "\" height=\"" << kHeight << "\" font-family=\"sans-serif\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
          "font-size=\"15\">"
       << escape(title) << "</text>\n";

    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = values[r][c];
            std::string fill = "#eeeeee";
            if (std::isfinite(v)) {
                const double f = (v - vr.lo) / (vr.hi - vr.lo);
                // white -> red ramp
                const int g = int(std::lround(255.0 * (1.0 - f)));
                std::ostringstream color;
                color << "rgb(255," << g << ',' << g << ')';
                fill = color.str();
            }
            const double x = kMarginL + cell_w * double(c);
            const double y = kMarginT + cell_h * double(r);
            os << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\""
               << num(cell_w) << "\" height=\"" << num(cell_h) << "\" fill=\""
               << fill << "\" stroke=\"#888888\"/>\n";
            std::ostringstream label;
            label.precision(4);
            if (std::isfinite(v))
                label << v;
            else
                label << "-";
            os << "<text x=\"" << num(x + cell_w / 2) << "\" y=\""
               << num(y + cell_h / 2 + 4)
               << "\" text-anchor=\"middle\" font-size=\"11\">" << label.str()
               << "</text>\n";
        }
    }
    for (std::size_t c = 0; c < col_labels.size() && c < cols; ++c)
        os << "<text x=\"" << num(kMarginL + cell_w * (double(c) + 0.5)) << "\" y=\""
           << kMarginT + (kHeight - kMarginT - kMarginB) + 18
           << "\" text-anchor=\"middle\" font-size=\"11\">" << escape(col_labels[c])
           << "</text>\n";
    for (std::size_t r = 0; r < row_labels.size() && r < rows; ++r)
        os << "<text x=\"" << kMarginL - 8 << "\" y=\""
           << num(kMarginT + cell_h * (double(r) + 0.5) + 4)
           << "\" text-anchor=\"end\" font-size=\"11\">" << escape(row_labels[r])
           << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << content;
}

}  // namespace blindac
