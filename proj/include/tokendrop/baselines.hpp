#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tokendrop/policy.hpp"

namespace tokendrop {

// Comparison dropping strategies. Every strategy drops exactly
// floor(ratio * token_count) tokens (ties broken toward the lowest index),
// so the compared models are cost-matched by construction.
enum class DropKind { Random, Attention, TemporalDifference, Learned };

struct DropStrategy {
    DropKind kind = DropKind::Random;
    double drop_ratio = 0.3;
    std::uint64_t seed = 0;
};

// Keep mask over n tokens with exactly floor(ratio*n) uniform-random drops.
std::vector<std::uint8_t> random_drop(int n, double ratio, std::uint64_t seed);

// Keeps the tokens ranked highest by `scores`; drops the floor(ratio*n)
// lowest (ties toward dropping the lowest index).
std::vector<std::uint8_t> keep_top_scores(const std::vector<double>& scores, double ratio);

// Runs the backbone densely up to and including `block_index`, averages that
// block's class-token attention row over heads, and drops the weakest
// patches. Default block is the second one.
std::vector<std::uint8_t> attention_drop(const Model& m, const Image& img, double ratio,
                                         int block_index = 1);
std::vector<double> cls_attention_scores(const Model& m, const Image& img, int block_index);

// Per-frame token matrices [n_slots x width]; score is the L2 distance to
// the same slot one frame earlier (first frame compares against zeros).
struct FrameTokens {
    int n_slots = 0, width = 0;
    std::vector<double> values;  // row-major
};
std::vector<std::uint8_t> temporal_difference_drop(const std::vector<FrameTokens>& frames,
                                                   double ratio);
std::vector<double> temporal_difference_scores(const std::vector<FrameTokens>& frames);

// Group-1 interpreter scores used as a cost-matched input-level strategy.
std::vector<std::uint8_t> learned_drop(const Model& m, const Image& img, double ratio);
std::vector<double> learned_scores(const Model& m, const Image& img, int group = 0);

// Zeroes the prune_ratio fraction of smallest-magnitude weights per linear
// layer (biases and layer norms untouched). Returns the layers touched.
int magnitude_prune(Model& m, double prune_ratio);
std::vector<Param*> linear_weight_params(Model& m);

// Trade-off curves without fine-tuning: x = linear-layer cost fraction of
// the dense model, y = greedy-eval accuracy.
struct CurvePoint {
    double flops_fraction = 1.0;
    double accuracy = 0.0;
    double threshold = 0.0;     // token threshold in force
    double prune_ratio = 0.0;
};

struct CurveSet {
    std::vector<CurvePoint> prune_only;
    std::vector<CurvePoint> tokens_only;
    std::vector<CurvePoint> combined;

    std::string csv() const;  // method,flops_fraction,accuracy rows
};

// Greedy frontier: from (thresholds[0], ratios[0]) repeatedly take the
// single move (next threshold or next ratio) losing the least accuracy per
// unit of linear-layer cost saved. The first entries anchor the curves;
// a threshold <= 0 means "interpreters off" and ratio 0 means unpruned, so
// {0, ...}, {0, ...} starts every curve at (1.0, dense accuracy).
CurveSet combined_sweep(const Model& m, const Dataset& eval_data,
                        const std::vector<double>& thresholds,
                        const std::vector<double>& prune_ratios);

}  // namespace tokendrop
