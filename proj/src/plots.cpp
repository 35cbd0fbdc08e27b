#include "epits/harness.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace epits::harness {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 400;
constexpr int kMargin = 54;

struct Series {
    std::string label;
    std::vector<double> xs, ys;
};

double nice_min(double v) { return std::isfinite(v) ? v : 0.0; }

std::string svg_header(const std::string& title) {
    std::ostringstream out;
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth << "' height='" << kHeight
        << "' viewBox='0 0 " << kWidth << " " << kHeight << "'>\n"
        << "<rect width='100%' height='100%' fill='white'/>\n"
        << "<text x='" << kWidth / 2 << "' y='22' text-anchor='middle' font-size='15' "
        << "font-family='sans-serif'>" << title << "</text>\n";
    return out.str();
}

void axes(std::ostringstream& out, double x_lo, double x_hi, double y_lo, double y_hi) {
    out << "<line x1='" << kMargin << "' y1='" << kHeight - kMargin << "' x2='"
        << kWidth - kMargin / 2 << "' y2='" << kHeight - kMargin
        << "' stroke='black' stroke-width='1'/>\n"
        << "<line x1='" << kMargin << "' y1='" << kHeight - kMargin << "' x2='" << kMargin
        << "' y2='" << kMargin / 2 << "' stroke='black' stroke-width='1'/>\n";
    std::ostringstream labels;
    labels.precision(4);
    labels << "<text x='" << kMargin << "' y='" << kHeight - kMargin + 16
           << "' font-size='11' font-family='sans-serif'>" << x_lo << "</text>\n"
           << "<text x='" << kWidth - kMargin / 2 << "' y='" << kHeight - kMargin + 16
           << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << x_hi
           << "</text>\n"
           << "<text x='" << kMargin - 4 << "' y='" << kHeight - kMargin
           << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << y_lo
           << "</text>\n"
           << "<text x='" << kMargin - 4 << "' y='" << kMargin / 2 + 8
           << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << y_hi
           << "</text>\n";
    out << labels.str();
}

void write_line_chart(const fs::path& path, const std::string& title,
                      const std::vector<Series>& series) {
    double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.xs.size(); ++i) {
            if (!std::isfinite(s.ys[i])) continue;
            x_lo = std::min(x_lo, s.xs[i]);
            x_hi = std::max(x_hi, s.xs[i]);
            y_lo = std::min(y_lo, s.ys[i]);
            y_hi = std::max(y_hi, s.ys[i]);
        }
    }
    if (x_hi < x_lo) { x_lo = 0; x_hi = 1; y_lo = 0; y_hi = 1; }
    if (y_hi <= y_lo) y_hi = y_lo + 1;
    if (x_hi <= x_lo) x_hi = x_lo + 1;

    auto px = [&](double x) {
        return kMargin + (x - x_lo) / (x_hi - x_lo) * (kWidth - 1.5 * kMargin);
    };
    auto py = [&](double y) {
        return kHeight - kMargin - (y - y_lo) / (y_hi - y_lo) * (kHeight - 1.5 * kMargin);
    };

    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ostringstream out;
    out << svg_header(title);
    axes(out, x_lo, x_hi, nice_min(y_lo), nice_min(y_hi));
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        out << "<polyline fill='none' stroke='" << colors[si % 6]
            << "' stroke-width='1.5' points='";
        for (std::size_t i = 0; i < s.xs.size(); ++i) {
            if (!std::isfinite(s.ys[i])) continue;
            out << px(s.xs[i]) << ',' << py(s.ys[i]) << ' ';
        }
        out << "'/>\n";
        out << "<text x='" << kWidth - kMargin / 2 << "' y='" << kMargin / 2 + 16 * (si + 1)
            << "' text-anchor='end' font-size='12' fill='" << colors[si % 6]
            << "' font-family='sans-serif'>" << s.label << "</text>\n";
    }
    out << "</svg>\n";
    std::ofstream file(path, std::ios::trunc);
    file << out.str();
}

void write_bar_chart(const fs::path& path, const std::string& title,
                     const std::vector<std::string>& labels, const std::vector<double>& values) {
    double y_hi = 0;
    for (double v : values)
        if (std::isfinite(v)) y_hi = std::max(y_hi, v);
    if (y_hi <= 0) y_hi = 1;

    const double span = kWidth - 1.5 * kMargin;
    const double slot = span / static_cast<double>(values.size());
    std::ostringstream out;
    out << svg_header(title);
    axes(out, 0, static_cast<double>(values.size()), 0, y_hi);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) continue;
        const double h = values[i] / y_hi * (kHeight - 1.5 * kMargin);
        const double x = kMargin + slot * static_cast<double>(i) + 0.15 * slot;
        out << "<rect x='" << x << "' y='" << kHeight - kMargin - h << "' width='" << 0.7 * slot
            << "' height='" << h << "' fill='#1f77b4'/>\n";
        out << "<text x='" << x + 0.35 * slot << "' y='" << kHeight - kMargin + 16
            << "' text-anchor='middle' font-size='11' font-family='sans-serif'>" << labels[i]
            << "</text>\n";
    }
    out << "</svg>\n";
    std::ofstream file(path, std::ios::trunc);
    file << out.str();
}

std::optional<fs::path> first_match(const fs::path& dir, const std::string& prefix,
                                    const std::string& suffix) {
    std::vector<fs::path> hits;
    if (!fs::exists(dir)) return std::nullopt;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (name.rfind(prefix, 0) == 0 && name.size() >= suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            hits.push_back(entry.path());
    }
    if (hits.empty()) return std::nullopt;
    std::sort(hits.begin(), hits.end());
    return hits.front();
}

}  // namespace

std::vector<std::string> emit_plots(const std::string& results_dir) {
    const fs::path dir(results_dir);
    const auto report_path = first_match(dir, "pretrain_report", ".json");
    const auto eval_path = first_match(dir, "eval_", ".json");
    const fs::path sweep_path = dir / "sweep.csv";
    const bool has_sweep = fs::exists(sweep_path);

    if (!report_path && !eval_path && !has_sweep)
        throw std::runtime_error(
            "no results to plot under " + results_dir +
            " (looked for pretrain_report*.json, eval_*.json, sweep.csv)");

    std::vector<std::string> written;

    if (report_path) {
        std::ifstream in(*report_path);
        const auto j = nlohmann::json::parse(in);
        std::vector<Series> series;
        if (j.contains("losses")) {
            for (const auto& [name, curve] : j["losses"].items()) {
                Series s;
                s.label = name;
                const auto values = curve.get<std::vector<double>>();
                for (std::size_t i = 0; i < values.size(); ++i) {
                    s.xs.push_back(static_cast<double>(i + 1));
                    s.ys.push_back(values[i]);
                }
                series.push_back(std::move(s));
            }
        }
        const fs::path out = dir / "loss_curve.svg";
        write_line_chart(out, "pre-training loss", series);
        written.push_back(out.string());
    }

    if (eval_path) {
        std::ifstream in(*eval_path);
        const auto j = nlohmann::json::parse(in);

        std::vector<std::string> labels;
        std::vector<double> values;
        if (j.contains("per_horizon")) {
            std::map<int, double> ordered;
            for (const auto& [horizon, entry] : j["per_horizon"].items())
                ordered[std::stoi(horizon)] = entry["rmse"].get<double>();
            for (const auto& [horizon, score] : ordered) {
                labels.push_back(horizon == 0 ? j.value("task", std::string("score"))
                                              : "+" + std::to_string(horizon) + "w");
                values.push_back(score);
            }
        }
        const fs::path bars = dir / "rmse_bars.svg";
        write_bar_chart(bars, "RMSE by horizon", labels, values);
        written.push_back(bars.string());

        Series pred, truth;
        pred.label = "prediction";
        truth.label = "truth";
        if (j.contains("records")) {
            for (const auto& rec : j["records"]) {
                const double x = rec["week"].get<double>() + rec["horizon"].get<double>();
                pred.xs.push_back(x);
                pred.ys.push_back(rec["prediction"].get<double>());
                truth.xs.push_back(x);
                truth.ys.push_back(rec["truth"].get<double>());
            }
        }
        const fs::path trace = dir / "predictions.svg";
        write_line_chart(trace, "predictions vs truth", {pred, truth});
        written.push_back(trace.string());
    }

    if (has_sweep) {
        std::ifstream in(sweep_path);
        std::string line;
        std::getline(in, line);  // header
        std::map<double, std::pair<double, int>> by_fraction;
        while (std::getline(in, line)) {
            std::istringstream row(line);
            std::string fraction, seed, rmse, skipped;
            std::getline(row, fraction, ',');
            std::getline(row, seed, ',');
            std::getline(row, rmse, ',');
            std::getline(row, skipped, ',');
            if (skipped == "1" || rmse.empty()) continue;
            auto& cell = by_fraction[std::stod(fraction)];
            cell.first += std::stod(rmse);
            cell.second += 1;
        }
        Series s;
        s.label = "avg RMSE";
        for (const auto& [fraction, cell] : by_fraction) {
            s.xs.push_back(fraction);
            s.ys.push_back(cell.first / cell.second);
        }
        const fs::path out = dir / "fraction_curve.svg";
        write_line_chart(out, "RMSE vs training-data fraction", {s});
        written.push_back(out.string());
    }

    return written;
}

}  // namespace epits::harness
