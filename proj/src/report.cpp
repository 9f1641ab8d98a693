#include "tune/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace tune {

namespace fs = std::filesystem;

double improvement_factor(const ParsedTrialLog& log) {
    double best = 0.0;
    bool any = false;
    for (const auto& rec : log.records) {
        if (!rec.obs.ok()) continue;
        any = true;
        best = std::max(best, rec.obs.tps_norm);
    }
    if (!any) raise(Errc::NoValidObservations, "trial has no ok records");
    return best;
}

std::vector<double> norm_diff_trace(const ParsedTrialLog& log, int batch) {
    if (batch < 1) raise(Errc::InvalidArgument, "batch must be >= 1");
    std::vector<double> steps;
    for (std::size_t i = 1; i < log.records.size(); ++i) {
        const auto& a = log.records[i - 1].x.coords;
        const auto& b = log.records[i].x.coords;
        double ss = 0;
        for (std::size_t j = 0; j < a.size(); ++j) ss += (a[j] - b[j]) * (a[j] - b[j]);
        steps.push_back(std::sqrt(ss));
    }
    std::vector<double> out;
    for (std::size_t i = 0; i < steps.size(); i += static_cast<std::size_t>(batch)) {
        std::size_t end = std::min(steps.size(), i + static_cast<std::size_t>(batch));
        double sum = 0;
        for (std::size_t k = i; k < end; ++k) sum += steps[k];
        out.push_back(sum / static_cast<double>(end - i));
    }
    return out;
}

TrialSummary summarize(const ParsedTrialLog& log, int batch) {
    TrialSummary s;
    s.method = log.method.name;
    s.is_random = log.method.kind == MethodKind::Random;
    if (!s.is_random) {
        s.af = acq_kind_name(log.method.acq.kind);
        s.dr = dr_kind_name(log.method.dr.kind);
    }
    s.embedded_or_random = s.is_random || (log.method.kind == MethodKind::Bo &&
                                           log.method.dr.kind == DrKind::Rembo);
    s.noise_score = log.ref_stats.noise_score;
    for (const auto& rec : log.records) {
        if (rec.obs.ok()) {
            s.has_valid = true;
            if (rec.obs.tps_norm > s.improvement_factor) {
                s.improvement_factor = rec.obs.tps_norm;
                s.best_tps_raw = rec.obs.tps_raw;
            }
        } else {
            ++s.n_failures;
        }
    }
    if (log.records.size() >= 2) s.norm_diff_trace = norm_diff_trace(log, batch);
    return s;
}

std::vector<TrialSummary> summarize_dir(const std::string& logs_dir, int batch) {
    if (!fs::is_directory(logs_dir)) raise(Errc::IoError, "log dir not found: " + logs_dir);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(logs_dir)) {
        if (!entry.is_regular_file()) continue;
        std::string name = entry.path().filename().string();
        if (name.rfind("trial-", 0) == 0 && name.size() > 6 &&
            name.substr(name.size() - 6) == ".jsonl")
            files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    std::vector<TrialSummary> out;
    for (const auto& f : files) out.push_back(summarize(load_trial_log(f), batch));
    return out;
}

Heatmap build_heatmap(const std::vector<TrialSummary>& summaries) {
    Heatmap hm;
    std::set<std::string> seen;
    for (const auto& s : summaries) {
        if (!seen.insert(s.method).second)
            raise(Errc::DuplicateMethod, "duplicate summary for method " + s.method);
        if (!s.has_valid) continue; // absent, never zero-filled
        if (s.is_random) {
            if (hm.baseline_present) raise(Errc::DuplicateMethod, "two random baselines");
            hm.baseline = s.improvement_factor;
            hm.baseline_present = true;
            continue;
        }
        int row = -1, col = -1;
        for (int i = 0; i < 4; ++i) {
            if (s.af == Heatmap::kAfOrder[static_cast<std::size_t>(i)]) row = i;
            if (s.dr == Heatmap::kDrOrder[static_cast<std::size_t>(i)]) col = i;
        }
        if (row < 0 || col < 0) continue; // off-grid method (e.g. DR "NONE")
        auto r = static_cast<std::size_t>(row);
        auto c = static_cast<std::size_t>(col);
        if (hm.present[r][c])
            raise(Errc::DuplicateMethod, "duplicate cell " + s.af + "-" + s.dr);
        hm.value[r][c] = s.improvement_factor;
        hm.present[r][c] = true;
    }
    return hm;
}

namespace {

std::string fmt(double v) { return format_double_shortest(v); }

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(Errc::IoError, "cannot write " + path.string());
    out << content;
}

// Blue (low) to red (high) ramp over [lo, hi].
std::string ramp_color(double v, double lo, double hi) {
    double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
    t = std::clamp(t, 0.0, 1.0);
    int r = static_cast<int>(40 + 215 * t);
    int g = static_cast<int>(80 + 60 * (1 - std::abs(2 * t - 1)));
    int b = static_cast<int>(40 + 215 * (1 - t));
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
}

struct SvgGridSpec {
    std::string title;
    bool three_decimals = false;
};

std::string svg_grid(const Heatmap& hm, const std::vector<TrialSummary>& summaries,
                     bool use_noise, const SvgGridSpec& spec) {
    // Cell values: improvement factors from the heatmap, or per-method noise scores.
    std::array<std::array<double, 4>, 4> value{};
    std::array<std::array<bool, 4>, 4> present{};
    double baseline = hm.baseline;
    bool baseline_present = hm.baseline_present;
    if (!use_noise) {
        value = hm.value;
        present = hm.present;
    } else {
        baseline_present = false;
        for (const auto& s : summaries) {
            if (s.is_random) {
                baseline = s.noise_score;
                baseline_present = s.has_valid;
                continue;
            }
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j)
                    if (s.af == Heatmap::kAfOrder[static_cast<std::size_t>(i)] &&
                        s.dr == Heatmap::kDrOrder[static_cast<std::size_t>(j)] && s.has_valid) {
                        value[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                            s.noise_score;
                        present[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = true;
                    }
        }
    }

    double lo = 1e300, hi = -1e300;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            if (present[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
                lo = std::min(lo, value[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
                hi = std::max(hi, value[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
            }
    if (baseline_present) {
        lo = std::min(lo, baseline);
        hi = std::max(hi, baseline);
    }
    if (lo > hi) {
        lo = 0;
        hi = 1;
    }

    const int cell = 90, left = 90, top = 50;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + 4 * cell + 20
        << "\" height=\"" << top + 5 * cell + 30 << "\" font-family=\"sans-serif\">\n";
    svg << "<text x=\"" << left << "\" y=\"22\" font-size=\"15\">" << spec.title << "</text>\n";
    for (int j = 0; j < 4; ++j)
        svg << "<text x=\"" << left + j * cell + cell / 2 << "\" y=\"" << top - 8
            << "\" text-anchor=\"middle\" font-size=\"12\">" << Heatmap::kDrOrder[static_cast<std::size_t>(j)]
            << "</text>\n";
    auto emit_cell = [&](int row, int col, bool ok, double v, const std::string& row_label) {
        int x = left + col * cell, y = top + row * cell;
        if (col == 0 && !row_label.empty())
            svg << "<text x=\"" << left - 10 << "\" y=\"" << y + cell / 2 + 4
                << "\" text-anchor=\"end\" font-size=\"12\">" << row_label << "</text>\n";
        if (ok) {
            svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell - 4
                << "\" height=\"" << cell - 4 << "\" fill=\"" << ramp_color(v, lo, hi)
                << "\"/>\n";
            svg << "<text x=\"" << x + (cell - 4) / 2 << "\" y=\"" << y + cell / 2 + 4
                << "\" text-anchor=\"middle\" font-size=\"13\" fill=\"#ffffff\">"
                << (spec.three_decimals ? fmt3(v) : fmt2(v)) << "</text>\n";
        } else {
            svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell - 4
                << "\" height=\"" << cell - 4
                << "\" fill=\"none\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 3\"/>\n";
            svg << "<text x=\"" << x + (cell - 4) / 2 << "\" y=\"" << y + cell / 2 + 4
                << "\" text-anchor=\"middle\" font-size=\"12\" fill=\"#888888\">n/a</text>\n";
        }
    };
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            emit_cell(i, j, present[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)],
                      value[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)],
                      j == 0 ? Heatmap::kAfOrder[static_cast<std::size_t>(i)] : "");
    emit_cell(4, 0, baseline_present, baseline, "random");
    svg << "</svg>\n";
    return svg.str();
}

std::string svg_bars(const std::vector<TrialSummary>& summaries) {
    std::vector<const TrialSummary*> rows;
    for (const auto& s : summaries)
        if (s.has_valid) rows.push_back(&s);
    double vmax = 1.0;
    for (const auto* s : rows) vmax = std::max(vmax, s->best_tps_raw);

    const int bar_w = 34, gap = 10, left = 60, top = 40, height = 260;
    int width = left + static_cast<int>(rows.size()) * (bar_w + gap) + 30;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << top + height + 110 << "\" font-family=\"sans-serif\">\n";
    svg << "<text x=\"" << left << "\" y=\"22\" font-size=\"15\">Best raw TPS per trial</text>\n";
    int x = left;
    for (const auto* s : rows) {
        int h = static_cast<int>(height * (s->best_tps_raw / vmax));
        svg << "<rect x=\"" << x << "\" y=\"" << top + height - h << "\" width=\"" << bar_w
            << "\" height=\"" << h << "\" fill=\"" << (s->is_random ? "#888888" : "#3b6fb5")
            << "\"/>\n";
        svg << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << top + height - h - 5
            << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt2(s->best_tps_raw)
            << "</text>\n";
        svg << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << top + height + 12
            << "\" text-anchor=\"middle\" font-size=\"9\" transform=\"rotate(45 " << x + bar_w / 2
            << " " << top + height + 12 << ")\">" << s->method << "</text>\n";
        x += bar_w + gap;
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string svg_normdiffs(const std::vector<TrialSummary>& summaries, bool include_embedded) {
    std::vector<const TrialSummary*> rows;
    double vmax = 0.0;
    std::size_t tmax = 1;
    for (const auto& s : summaries) {
        if (s.norm_diff_trace.empty()) continue;
        if (!include_embedded && s.embedded_or_random) continue;
        rows.push_back(&s);
        tmax = std::max(tmax, s.norm_diff_trace.size());
        for (double v : s.norm_diff_trace) vmax = std::max(vmax, v);
    }
    if (vmax <= 0) vmax = 1.0;

    const int left = 60, top = 40, width = 640, height = 300;
    static constexpr const char* kPalette[8] = {"#3b6fb5", "#b5463b", "#3bb57a", "#b5a23b",
                                                "#7a3bb5", "#3bb5b0", "#b53b8e", "#6fb53b"};
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + width + 180
        << "\" height=\"" << top + height + 60 << "\" font-family=\"sans-serif\">\n";
    svg << "<text x=\"" << left << "\" y=\"22\" font-size=\"15\">Batched step norms between "
           "successive proposals</text>\n";
    svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << width << "\" height=\""
        << height << "\" fill=\"none\" stroke=\"#444444\"/>\n";
    int color = 0;
    for (const auto* s : rows) {
        std::ostringstream pts;
        for (std::size_t i = 0; i < s->norm_diff_trace.size(); ++i) {
            double px = left + (tmax > 1 ? static_cast<double>(i) / static_cast<double>(tmax - 1)
                                         : 0.5) *
                                   width;
            double py = top + height - (s->norm_diff_trace[i] / vmax) * height;
            if (i) pts << " ";
            pts << fmt2(px) << "," << fmt2(py);
        }
        const char* c = kPalette[color % 8];
        svg << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << c
            << "\" stroke-width=\"1.5\"/>\n";
        svg << "<text x=\"" << left + width + 10 << "\" y=\"" << top + 14 + 16 * color
            << "\" font-size=\"11\" fill=\"" << c << "\">" << s->method << "</text>\n";
        ++color;
    }
    svg << "</svg>\n";
    return svg.str();
}

} // namespace

void emit(const std::vector<TrialSummary>& summaries, const std::string& out_dir,
          bool include_embedded) {
    fs::create_directories(out_dir);
    fs::path dir(out_dir);

    Heatmap hm = build_heatmap(summaries);

    {
        std::ostringstream csv;
        csv << "method,af,dr,improvement_factor,best_tps,noise_score,n_failures\n";
        for (const auto& s : summaries) {
            csv << s.method << "," << s.af << "," << s.dr << ",";
            if (s.has_valid)
                csv << fmt(s.improvement_factor) << "," << fmt(s.best_tps_raw) << ","
                    << fmt(s.noise_score);
            else
                csv << ",,";
            csv << "," << s.n_failures << "\n";
        }
        write_file(dir / "summary.csv", csv.str());
    }
    {
        std::ostringstream csv;
        csv << "af,PCA,REMBO,SA,SHAP\n";
        for (int i = 0; i < 4; ++i) {
            csv << Heatmap::kAfOrder[static_cast<std::size_t>(i)];
            for (int j = 0; j < 4; ++j) {
                csv << ",";
                if (hm.present[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)])
                    csv << fmt(hm.value[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
            }
            csv << "\n";
        }
        csv << "random";
        csv << "," << (hm.baseline_present ? fmt(hm.baseline) : "") << ",,,\n";
        write_file(dir / "heatmap.csv", csv.str());
    }
    {
        std::ostringstream csv;
        csv << "method,af,dr,best_tps\n";
        for (const auto& s : summaries) {
            csv << s.method << "," << s.af << "," << s.dr << ",";
            if (s.has_valid) csv << fmt(s.best_tps_raw);
            csv << "\n";
        }
        write_file(dir / "best_values.csv", csv.str());
    }
    {
        std::ostringstream csv;
        csv << "method,af,dr,noise_score\n";
        for (const auto& s : summaries) {
            csv << s.method << "," << s.af << "," << s.dr << ",";
            if (s.has_valid) csv << fmt(s.noise_score);
            csv << "\n";
        }
        write_file(dir / "noise.csv", csv.str());
    }
    {
        std::ostringstream csv;
        csv << "method,batch,mean_step_norm\n";
        for (const auto& s : summaries)
            for (std::size_t i = 0; i < s.norm_diff_trace.size(); ++i)
                csv << s.method << "," << i << "," << fmt(s.norm_diff_trace[i]) << "\n";
        write_file(dir / "normdiffs.csv", csv.str());
    }

    write_file(dir / "heatmap.svg",
               svg_grid(hm, summaries, false,
                        {"Best throughput improvement factor by method", false}));
    write_file(dir / "noise.svg",
               svg_grid(hm, summaries, true, {"Reference-run noise scores (CV)", true}));
    write_file(dir / "best_values.svg", svg_bars(summaries));
    write_file(dir / "normdiffs.svg", svg_normdiffs(summaries, include_embedded));
}

} // namespace tune
