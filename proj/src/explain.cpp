#include "tokendrop/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "tokendrop/pixmap.hpp"

namespace tokendrop {

std::vector<double> assemble_scores(const std::vector<KeepDecision>& history, int group,
                                    int n_patches) {
    if (group < 0 || group >= static_cast<int>(history.size())) {
        throw std::invalid_argument("assemble_scores: group " + std::to_string(group) +
                                    " not in history of " + std::to_string(history.size()));
    }
    std::vector<double> out(static_cast<std::size_t>(n_patches), 0.0);
    const KeepDecision& d = history[static_cast<std::size_t>(group)];
    for (std::size_t i = 0; i < d.token_index.size(); ++i) {
        out[static_cast<std::size_t>(d.token_index[i])] = d.score[i];
    }
    return out;
}

Image upsample(const std::vector<double>& scores, int grid_rows, int grid_cols, int out_h,
               int out_w, UpsampleMode mode) {
    if (static_cast<int>(scores.size()) != grid_rows * grid_cols) {
        throw std::invalid_argument("upsample: " + std::to_string(scores.size()) +
                                    " scores for a " + std::to_string(grid_rows) + "x" +
                                    std::to_string(grid_cols) + " grid");
    }
    Image out;
    out.h = out_h;
    out.w = out_w;
    out.c = 1;
    out.pix.assign(static_cast<std::size_t>(out_h) * static_cast<std::size_t>(out_w), 0.0);

    const double sy = static_cast<double>(grid_rows) / static_cast<double>(out_h);
    const double sx = static_cast<double>(grid_cols) / static_cast<double>(out_w);
    for (int y = 0; y < out_h; ++y) {
        // pixel centers mapped into grid-cell-center coordinates
        const double gy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        for (int x = 0; x < out_w; ++x) {
            const double gx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            double v = 0.0;
            if (mode == UpsampleMode::Nearest) {
                const int r = std::clamp(static_cast<int>(std::lround(gy)), 0, grid_rows - 1);
                const int c = std::clamp(static_cast<int>(std::lround(gx)), 0, grid_cols - 1);
                v = scores[static_cast<std::size_t>(r * grid_cols + c)];
            } else {
                const int r0 = std::clamp(static_cast<int>(std::floor(gy)), 0, grid_rows - 1);
                const int c0 = std::clamp(static_cast<int>(std::floor(gx)), 0, grid_cols - 1);
                const int r1 = std::min(r0 + 1, grid_rows - 1);
                const int c1 = std::min(c0 + 1, grid_cols - 1);
                const double fy = std::clamp(gy - static_cast<double>(r0), 0.0, 1.0);
                const double fx = std::clamp(gx - static_cast<double>(c0), 0.0, 1.0);
                const double top = scores[static_cast<std::size_t>(r0 * grid_cols + c0)] * (1.0 - fx) +
                                   scores[static_cast<std::size_t>(r0 * grid_cols + c1)] * fx;
                const double bot = scores[static_cast<std::size_t>(r1 * grid_cols + c0)] * (1.0 - fx) +
                                   scores[static_cast<std::size_t>(r1 * grid_cols + c1)] * fx;
                v = top * (1.0 - fy) + bot * fy;
            }
            out.pix[static_cast<std::size_t>(y * out_w + x)] = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

SegmentationResult segmentation_metrics(const Image& heatmap, const Mask& gt,
                                        double binarize_threshold) {
    if (heatmap.h != gt.h || heatmap.w != gt.w || heatmap.c != 1) {
        throw std::invalid_argument("segmentation_metrics: heatmap/mask dimensions differ");
    }
    for (auto v : gt.fg) {
        if (v != 0 && v != 1) throw std::invalid_argument("segmentation_metrics: mask is not binary");
    }

    long tp = 0, tn = 0, fp = 0, fn = 0;
    for (int y = 0; y < gt.h; ++y) {
        for (int x = 0; x < gt.w; ++x) {
            const bool pred = heatmap.at(y, x) > binarize_threshold;
            const bool truth = gt.at(y, x) != 0;
            if (pred && truth) ++tp;
            else if (!pred && !truth) ++tn;
            else if (pred && !truth) ++fp;
            else ++fn;
        }
    }

    // A class absent from both sides counts as perfectly segmented.
    const auto safe_ratio = [](long num, long den) {
        return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    SegmentationResult r;
    const long total = tp + tn + fp + fn;
    r.pixel_accuracy = static_cast<double>(tp + tn) / static_cast<double>(total);
    r.fg_accuracy = safe_ratio(tp, tp + fn);
    r.bg_accuracy = safe_ratio(tn, tn + fp);
    r.mean_accuracy = 0.5 * (r.fg_accuracy + r.bg_accuracy);
    r.fg_iou = safe_ratio(tp, tp + fp + fn);
    r.bg_iou = safe_ratio(tn, tn + fp + fn);
    r.mean_iou = 0.5 * (r.fg_iou + r.bg_iou);
    return r;
}

double mean_value(const Image& heatmap) {
    double s = 0.0;
    for (double v : heatmap.pix) s += v;
    return heatmap.pix.empty() ? 0.0 : s / static_cast<double>(heatmap.pix.size());
}

void render_heatmap(const Image& heatmap, const Image& base, const std::string& raw_path,
                    const std::string& overlay_path) {
    if (heatmap.h != base.h || heatmap.w != base.w || heatmap.c != 1) {
        throw std::invalid_argument("render_heatmap: heatmap/base dimensions differ");
    }
    write_pgm(heatmap, raw_path);

    const Image rgb = to_rgb(base);
    Image overlay;
    overlay.h = base.h;
    overlay.w = base.w;
    overlay.c = 3;
    overlay.pix.resize(rgb.pix.size());
    constexpr double alpha = 0.5;  // fixed blend
    for (int y = 0; y < base.h; ++y) {
        for (int x = 0; x < base.w; ++x) {
            const double heat = heatmap.at(y, x);
            // heat color: red ramp
            const double hr = heat, hg = 0.0, hb = 0.0;
            overlay.at(y, x, 0) = (1.0 - alpha) * rgb.at(y, x, 0) + alpha * hr;
            overlay.at(y, x, 1) = (1.0 - alpha) * rgb.at(y, x, 1) + alpha * hg;
            overlay.at(y, x, 2) = (1.0 - alpha) * rgb.at(y, x, 2) + alpha * hb;
        }
    }
    write_ppm(overlay, overlay_path);
}

std::string segmentation_csv_row(const std::string& tag, const SegmentationResult& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", tag.c_str(),
                  r.pixel_accuracy, r.mean_accuracy, r.mean_iou, r.fg_accuracy, r.bg_accuracy,
                  r.fg_iou, r.bg_iou);
    return buf;
}

}  // namespace tokendrop
