#pragma once

#include <string>
#include <vector>

#include "tokendrop/data.hpp"
#include "tokendrop/interpreter.hpp"

namespace tokendrop {

// Full-length score sequence for one group plus its upsampled heatmap.
struct ScoreMap {
    std::vector<double> scores;  // length n_patches, 0 for dropped tokens
    int grid_rows = 0, grid_cols = 0;
    Image heatmap;               // single channel, values in [0,1]
};

struct SegmentationResult {
    double pixel_accuracy = 0.0;
    double mean_accuracy = 0.0;   // mean of per-class recalls (fg, bg)
    double mean_iou = 0.0;
    double fg_accuracy = 0.0, bg_accuracy = 0.0;
    double fg_iou = 0.0, bg_iou = 0.0;
};

// Scores of group `group` spread over the original grid order: tokens
// dropped at any earlier group carry exactly 0, survivors their score.
std::vector<double> assemble_scores(const std::vector<KeepDecision>& history, int group,
                                    int n_patches);

enum class UpsampleMode { Bilinear, Nearest };

// Grid scores -> image-sized heatmap, clamped to [0,1]. Cells are treated
// as samples at their centers; edge pixels clamp to the border cell.
Image upsample(const std::vector<double>& scores, int grid_rows, int grid_cols, int out_h,
               int out_w, UpsampleMode mode = UpsampleMode::Bilinear);

// Two-class metrics against a binary mask. Prediction is heatmap >
// binarize_threshold. A class missing from both prediction and truth scores
// IoU 1; missing from only one side scores 0.
SegmentationResult segmentation_metrics(const Image& heatmap, const Mask& gt,
                                        double binarize_threshold);

double mean_value(const Image& heatmap);

// Writes the raw heatmap as a P5 graymap and a 0.5/0.5 blend of the image
// with red heat as a P6 pixmap.
void render_heatmap(const Image& heatmap, const Image& base, const std::string& raw_path,
                    const std::string& overlay_path);

std::string segmentation_csv_row(const std::string& tag, const SegmentationResult& r);

}  // namespace tokendrop
