#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "latentmark/errors.hpp"
#include "latentmark/experiment.hpp"

// report writers: CSV for diffing, JSON for machines, SVG for eyeballs

namespace latentmark {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write: " + path);
    return out;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void svg_header(std::ofstream& out, int w, int h) {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
        << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
}

void svg_text(std::ofstream& out, double x, double y, const std::string& s,
              const char* anchor = "start", int size = 11) {
    out << "<text x=\"" << x << "\" y=\"" << y << "\" font-family=\"monospace\" font-size=\""
        << size << "\" text-anchor=\"" << anchor << "\">" << s << "</text>\n";
}

}  // namespace

void write_history_csv(const std::vector<HistoryRow>& history, const std::string& path) {
    auto out = open_out(path);
    out << "iteration,msg,init,low,high,total,bit_acc\n";
    for (const auto& r : history) {
        out << r.iteration << ',' << fmt("%.9g", r.loss.msg) << ',' << fmt("%.9g", r.loss.init)
            << ',' << fmt("%.9g", r.loss.low) << ',' << fmt("%.9g", r.loss.high) << ','
            << fmt("%.9g", r.loss.total) << ',' << fmt("%.6f", r.bit_acc) << '\n';
    }
}

void write_history_svg(const std::vector<HistoryRow>& history, const std::string& path) {
    const int w = 640, h = 360, ml = 56, mr = 16, mt = 24, mb = 36;
    const double pw = w - ml - mr, ph = h - mt - mb;
    auto out = open_out(path);
    svg_header(out, w, h);
    svg_text(out, ml, 15, "total loss (log10) and bit accuracy per iteration");

    if (!history.empty()) {
        double lo = 1e300, hi = -1e300;
        auto log_total = [](const HistoryRow& r) {
            return std::log10(std::max(r.loss.total, 1e-12));
        };
        for (const auto& r : history) {
            lo = std::min(lo, log_total(r));
            hi = std::max(hi, log_total(r));
        }
        if (hi - lo < 1e-9) hi = lo + 1.0;
        const double n = static_cast<double>(std::max<std::size_t>(history.size() - 1, 1));

        auto px = [&](std::size_t i) { return ml + pw * static_cast<double>(i) / n; };
        std::string loss_pts, acc_pts;
        for (std::size_t i = 0; i < history.size(); ++i) {
            const double ly = mt + ph * (1.0 - (log_total(history[i]) - lo) / (hi - lo));
            const double ay = mt + ph * (1.0 - history[i].bit_acc);
            loss_pts += fmt("%.1f", px(i)) + "," + fmt("%.1f", ly) + " ";
            acc_pts += fmt("%.1f", px(i)) + "," + fmt("%.1f", ay) + " ";
        }
        out << "<polyline points=\"" << loss_pts
            << "\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\"/>\n";
        out << "<polyline points=\"" << acc_pts
            << "\" fill=\"none\" stroke=\"#2471a3\" stroke-width=\"1.5\"/>\n";
        svg_text(out, ml, h - 8, "0");
        svg_text(out, w - mr, h - 8, std::to_string(history.back().iteration), "end");
        svg_text(out, 8, mt + 10, fmt("%.2f", hi));
        svg_text(out, 8, mt + ph, fmt("%.2f", lo));
        svg_text(out, w - mr, mt + 10, "loss", "end");
        svg_text(out, w - mr, mt + 24, "acc", "end");
    }
    out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"black\"/>\n</svg>\n";
}

void write_accuracy_svg(const RobustnessReport& report, const std::string& path) {
    const int bar_h = 18, gap = 6, ml = 170, mr = 60, mt = 34;
    const int pw = 400;
    const int n = static_cast<int>(report.rows.size());
    const int h = mt + n * (bar_h + gap) + 28;
    const int w = ml + pw + mr;
    auto out = open_out(path);
    svg_header(out, w, h);
    svg_text(out, ml, 16, "mean bit accuracy per attack");

    for (double g = 0.0; g <= 1.0001; g += 0.25) {
        const double x = ml + pw * g;
        out << "<line x1=\"" << x << "\" y1=\"" << mt - 6 << "\" x2=\"" << x << "\" y2=\""
            << mt + n * (bar_h + gap) << "\" stroke=\"#cccccc\"/>\n";
        svg_text(out, x, h - 8, fmt("%.2f", g), "middle");
    }
    for (int i = 0; i < n; ++i) {
        const auto& row = report.rows[i];
        const double y = mt + i * (bar_h + gap);
        const double bw = pw * std::clamp(row.mean_accuracy, 0.0, 1.0);
        out << "<rect x=\"" << ml << "\" y=\"" << y << "\" width=\"" << bw << "\" height=\""
            << bar_h << "\" fill=\"" << (i == 0 ? "#27ae60" : "#2980b9") << "\"/>\n";
        svg_text(out, ml - 6, y + bar_h - 5, row.label, "end");
        svg_text(out, ml + pw + 6, y + bar_h - 5,
                 fmt("%.3f", row.mean_accuracy) + " / tpr " + fmt("%.2f", row.tpr));
    }
    out << "</svg>\n";
}

std::vector<std::string> write_report(const RobustnessReport& report, const std::string& dir,
                                      bool csv, bool json_out, bool plot) {
    fs::create_directories(dir);
    std::vector<std::string> written;

    if (csv) {
        const std::string path = (fs::path(dir) / "report.csv").string();
        auto out = open_out(path);
        out << "attack,images,mean_bit_accuracy,tpr\n";
        for (const auto& row : report.rows)
            out << row.label << ',' << report.matched.size() << ','
                << fmt("%.6f", row.mean_accuracy) << ',' << fmt("%.6f", row.tpr) << '\n';
        written.push_back(path);
    }
    if (json_out) {
        const std::string path = (fs::path(dir) / "report.json").string();
        auto out = open_out(path);
        out << report_to_json(report).dump(2) << "\n";
        written.push_back(path);
    }
    if (plot) {
        const std::string path = (fs::path(dir) / "report.svg").string();
        write_accuracy_svg(report, path);
        written.push_back(path);
    }
    return written;
}

}  // namespace latentmark
