#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tokendrop {

// Analytical cost model. Counts follow the standard transformer complexity
// expressions (4ND^2 + 2N^2D per attention block, 8ND^2 per feed-forward,
// N including the class token): one multiply-accumulate is one counted
// operation. Wall-clock timing is reported separately and never folded in.
struct CostConfig {
    int blocks = 6;
    int d_emb = 64;
    int n_patches = 16;        // full patch count, class token added internally
    int group_count = 0;       // 0 = plain backbone, no interpreter cost
    int blocks_per_group = 0;
    int interp_heads = 0;

    static CostConfig plain(int blocks, int d_emb, int n_patches) {
        return CostConfig{blocks, d_emb, n_patches, 0, 0, 0};
    }
};

std::int64_t msa_flops(std::int64_t n_tokens, std::int64_t d_emb);
std::int64_t ffn_flops(std::int64_t n_tokens, std::int64_t d_emb);
// Per-group scorer cost: each live patch token is projected (d^2) and dotted
// (d) against the projected policy token (one extra d^2). A minor term next
// to the block costs, included so pruned-model totals stay honest.
std::int64_t interpreter_flops(std::int64_t n_live_patches, std::int64_t d_emb);

struct BlockCost {
    std::int64_t msa = 0, ffn = 0, interp = 0;  // interp charged on group-leading blocks
    std::int64_t total() const { return msa + ffn + interp; }
};

struct CostReport {
    std::vector<BlockCost> per_block;        // mean over accumulated samples
    double mean_total = 0.0;                 // dataset mean (equals the sample total for one trace)
    std::vector<double> keep_ratio_per_group;
    std::int64_t baseline_total = 0;         // same config, every token live
    double speedup = 1.0;                    // baseline / mean
    int samples = 0;

    std::string csv() const;  // one row per block plus a summary row
};

// Cost of one sample whose live patch count per block is `keep_trace`
// (non-increasing; class token accounted automatically).
CostReport model_flops(const CostConfig& cfg, const std::vector<int>& keep_trace);

// Dataset mean over many traces.
CostReport accumulate_costs(const CostConfig& cfg, const std::vector<std::vector<int>>& traces);

// Cost of the linear layers only (the attention N^2 term excluded), used by
// the pruning trade-off curves; optionally scaled by magnitude pruning.
double linear_layer_flops(const CostConfig& cfg, const std::vector<int>& keep_trace,
                          double prune_ratio = 0.0);

}  // namespace tokendrop
