#pragma once

// Minimal self-contained SVG emitters for the three report plots. No external
// assets, no timestamps, fixed-precision coordinates: rerunning a command
// must reproduce every byte.

#include <cstdio>
#include <fstream>

#include "scalpel/analysis.hpp"
#include "scalpel/baselines.hpp"

namespace scalpel {
namespace svg_detail {

inline std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&')
            out += "&amp;";
        else if (c == '<')
            out += "&lt;";
        else if (c == '>')
            out += "&gt;";
        else
            out += c;
    }
    return out;
}

inline constexpr std::array<const char*, kSitesPerLayer> kSiteColors = {
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1"};

struct Canvas {
    std::string body;
    double width, height;

    Canvas(double w, double h) : width(w), height(h) {}

    void rect(double x, double y, double w, double h, const std::string& fill) {
        body += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) +
                "\" height=\"" + num(h) + "\" fill=\"" + fill + "\"/>\n";
    }
    void line(double x1, double y1, double x2, double y2, const std::string& stroke) {
        body += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) +
                "\" y2=\"" + num(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"1\"/>\n";
    }
    void circle(double cx, double cy, double r, const std::string& fill) {
        body += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"" + num(r) +
                "\" fill=\"" + fill + "\"/>\n";
    }
    void text(double x, double y, const std::string& s, int size = 11,
              const std::string& anchor = "start") {
        body += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" +
                std::to_string(size) +
                "\" font-family=\"monospace\" text-anchor=\"" + anchor + "\">" + escape(s) +
                "</text>\n";
    }

    void save(const std::filesystem::path& path, const std::string& title) const {
        std::ofstream os(path);
        if (!os) throw InputError("cannot write " + path.string());
        os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << num(width) << ' '
           << num(height) << "\">\n";
        os << "<title>" << escape(title) << "</title>\n";
        os << "<rect x=\"0\" y=\"0\" width=\"" << num(width) << "\" height=\"" << num(height)
           << "\" fill=\"white\"/>\n";
        os << body;
        os << "</svg>\n";
    }
};

}  // namespace svg_detail

// Grouped bar chart: one group per layer, one bar per projection site.
inline void importance_svg(const ImportanceReport& rep, const std::filesystem::path& path) {
    using namespace svg_detail;
    const std::size_t n_layers = rep.layer_totals.size();
    if (n_layers == 0) throw InputError("importance plot: no layers");
    Canvas cv(640, 400);
    const double left = 50, right = 620, top = 40, bottom = 340;

    double max_score = 0;
    for (const auto& s : rep.sites) max_score = std::max(max_score, s.score);
    if (max_score == 0) max_score = 1;

    cv.line(left, bottom, right, bottom, "#333333");
    cv.line(left, top, left, bottom, "#333333");
    cv.text(left - 6, top + 4, num(max_score), 10, "end");
    cv.text(left - 6, bottom + 4, "0", 10, "end");

    const double group_w = (right - left) / static_cast<double>(n_layers);
    const double bar_w = group_w * 0.8 / kSitesPerLayer;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const double gx = left + group_w * static_cast<double>(l) + group_w * 0.1;
        for (int s = 0; s < kSitesPerLayer; ++s) {
            const double score =
                rep.sites[l * static_cast<std::size_t>(kSitesPerLayer) + static_cast<std::size_t>(s)]
                    .score;
            const double h = (bottom - top) * score / max_score;
            cv.rect(gx + bar_w * s, bottom - h, bar_w * 0.9, h, kSiteColors[static_cast<std::size_t>(s)]);
        }
        cv.text(gx + group_w * 0.4, bottom + 16, "L" + std::to_string(l), 11, "middle");
        const bool peak = static_cast<i64>(l) == rep.peak_layer;
        cv.text(gx + group_w * 0.4, bottom + 30,
                (peak ? "*" : "") + num(rep.layer_totals[l]), 9, "middle");
    }
    for (int s = 0; s < kSitesPerLayer; ++s) {
        const double lx = left + 84.0 * s;
        cv.rect(lx, 370, 10, 10, kSiteColors[static_cast<std::size_t>(s)]);
        cv.text(lx + 14, 379, kSiteNames[static_cast<std::size_t>(s)], 10);
    }
    cv.text(320, 20, "adapter update magnitude by layer and site", 13, "middle");
    cv.save(path, "site importance");
}

// Labeled scatter of the 2-D task embedding.
inline void mds_svg(const Embedding2D& emb, const std::filesystem::path& path) {
    using namespace svg_detail;
    const std::size_t n = emb.names.size();
    if (n == 0) throw InputError("embedding plot: no points");
    Canvas cv(640, 400);
    const double left = 60, right = 580, top = 50, bottom = 350;

    double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0;
    for (std::size_t i = 0; i < n; ++i) {
        lo_x = std::min(lo_x, emb.coords[i][0]);
        hi_x = std::max(hi_x, emb.coords[i][0]);
        lo_y = std::min(lo_y, emb.coords[i][1]);
        hi_y = std::max(hi_y, emb.coords[i][1]);
    }
    const double pad_x = std::max(1e-9, (hi_x - lo_x) * 0.1);
    const double pad_y = std::max(1e-9, (hi_y - lo_y) * 0.1);
    lo_x -= pad_x, hi_x += pad_x, lo_y -= pad_y, hi_y += pad_y;

    auto sx = [&](double v) { return left + (v - lo_x) / (hi_x - lo_x) * (right - left); };
    auto sy = [&](double v) { return bottom - (v - lo_y) / (hi_y - lo_y) * (bottom - top); };

    cv.line(sx(0), top, sx(0), bottom, "#dddddd");
    cv.line(left, sy(0), right, sy(0), "#dddddd");
    for (std::size_t i = 0; i < n; ++i) {
        cv.circle(sx(emb.coords[i][0]), sy(emb.coords[i][1]), 4, "#4e79a7");
        cv.text(sx(emb.coords[i][0]) + 7, sy(emb.coords[i][1]) + 4, emb.names[i], 11);
    }
    cv.text(320, 24, "task embedding (stress " + num(emb.stress) + ")", 13, "middle");
    cv.save(path, "task embedding");
}

// Accuracy-drop vs capability scatter; perplexity rides along in each label.
inline void tradeoff_svg(std::span<const CompareRow> rows, const std::filesystem::path& path) {
    using namespace svg_detail;
    Canvas cv(640, 400);
    const double left = 70, right = 580, top = 50, bottom = 340;

    double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 1;
    for (const auto& r : rows) {
        if (!r.ok) continue;
        lo_x = std::min(lo_x, r.accuracy_drop);
        hi_x = std::max(hi_x, r.accuracy_drop);
        lo_y = std::min(lo_y, r.capability);
        hi_y = std::max(hi_y, r.capability);
    }
    const double pad_x = std::max(1e-9, (hi_x - lo_x) * 0.1);
    const double pad_y = std::max(1e-9, (hi_y - lo_y) * 0.1);
    lo_x -= pad_x, hi_x += pad_x, lo_y -= pad_y, hi_y += pad_y;

    auto sx = [&](double v) { return left + (v - lo_x) / (hi_x - lo_x) * (right - left); };
    auto sy = [&](double v) { return bottom - (v - lo_y) / (hi_y - lo_y) * (bottom - top); };

    cv.line(left, bottom, right, bottom, "#333333");
    cv.line(left, top, left, bottom, "#333333");
    cv.text(320, bottom + 28, "target accuracy drop", 11, "middle");
    cv.text(18, 200, "capability", 11, "middle");
    cv.text(left, bottom + 14, num(lo_x), 9, "middle");
    cv.text(right, bottom + 14, num(hi_x), 9, "middle");
    cv.text(left - 6, bottom, num(lo_y), 9, "end");
    cv.text(left - 6, top + 8, num(hi_y), 9, "end");

    std::size_t color_at = 0;
    for (const auto& r : rows) {
        if (!r.ok) continue;
        const auto* color = kSiteColors[color_at % kSiteColors.size()];
        ++color_at;
        cv.circle(sx(r.accuracy_drop), sy(r.capability), 5, color);
        cv.text(sx(r.accuracy_drop) + 8, sy(r.capability) + 4,
                r.method + " (ppl " + num(r.perplexity) + ")", 10);
    }
    cv.text(320, 24, "suppression vs capability trade-off", 13, "middle");
    cv.save(path, "method trade-off");
}

}  // namespace scalpel
