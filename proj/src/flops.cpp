#include "tokendrop/flops.hpp"

#include <cstdio>
#include <stdexcept>

namespace tokendrop {

std::int64_t msa_flops(std::int64_t n_tokens, std::int64_t d_emb) {
    if (n_tokens < 1) throw std::invalid_argument("msa_flops: need at least one token");
    return 4 * n_tokens * d_emb * d_emb + 2 * n_tokens * n_tokens * d_emb;
}

std::int64_t ffn_flops(std::int64_t n_tokens, std::int64_t d_emb) {
    if (n_tokens < 1) throw std::invalid_argument("ffn_flops: need at least one token");
    return 8 * n_tokens * d_emb * d_emb;
}

std::int64_t interpreter_flops(std::int64_t n_live_patches, std::int64_t d_emb) {
    return n_live_patches * (d_emb * d_emb + d_emb) + d_emb * d_emb;
}

CostReport model_flops(const CostConfig& cfg, const std::vector<int>& keep_trace) {
    if (static_cast<int>(keep_trace.size()) != cfg.blocks) {
        throw std::invalid_argument("model_flops: trace length " + std::to_string(keep_trace.size()) +
                                    " vs " + std::to_string(cfg.blocks) + " blocks");
    }
    for (std::size_t i = 1; i < keep_trace.size(); ++i) {
        if (keep_trace[i] > keep_trace[i - 1]) {
            throw std::invalid_argument("model_flops: keep trace increases at block " +
                                        std::to_string(i) + " (dropped tokens never return)");
        }
    }
    const bool grouped = cfg.group_count > 0;
    if (grouped && cfg.blocks_per_group * cfg.group_count != cfg.blocks) {
        throw std::invalid_argument("model_flops: group structure does not tile the blocks");
    }

    CostReport rep;
    rep.per_block.resize(static_cast<std::size_t>(cfg.blocks));
    rep.keep_ratio_per_group.assign(static_cast<std::size_t>(grouped ? cfg.group_count : 0), 0.0);
    std::int64_t total = 0;
    for (int blk = 0; blk < cfg.blocks; ++blk) {
        const std::int64_t live = keep_trace[static_cast<std::size_t>(blk)];
        const std::int64_t tokens = live + 1;  // class token
        BlockCost& c = rep.per_block[static_cast<std::size_t>(blk)];
        c.msa = msa_flops(tokens, cfg.d_emb);
        c.ffn = ffn_flops(tokens, cfg.d_emb);
        if (grouped && blk % cfg.blocks_per_group == 0) {
            // scorer sees the tokens live at group entry: those of the previous block
            const std::int64_t entry = blk == 0 ? cfg.n_patches : keep_trace[static_cast<std::size_t>(blk - 1)];
            c.interp = interpreter_flops(entry, cfg.d_emb);
            rep.keep_ratio_per_group[static_cast<std::size_t>(blk / cfg.blocks_per_group)] =
                static_cast<double>(live) / static_cast<double>(cfg.n_patches);
        }
        total += c.total();
    }
    rep.mean_total = static_cast<double>(total);
    rep.samples = 1;

    std::vector<int> full(static_cast<std::size_t>(cfg.blocks), cfg.n_patches);
    std::int64_t baseline = 0;
    for (int blk = 0; blk < cfg.blocks; ++blk) {
        baseline += msa_flops(cfg.n_patches + 1, cfg.d_emb) + ffn_flops(cfg.n_patches + 1, cfg.d_emb);
        if (grouped && blk % cfg.blocks_per_group == 0)
            baseline += interpreter_flops(cfg.n_patches, cfg.d_emb);
    }
    rep.baseline_total = baseline;
    rep.speedup = static_cast<double>(baseline) / rep.mean_total;
    return rep;
}

CostReport accumulate_costs(const CostConfig& cfg, const std::vector<std::vector<int>>& traces) {
    if (traces.empty()) throw std::invalid_argument("accumulate_costs: no traces");
    CostReport agg = model_flops(cfg, traces[0]);
    std::vector<double> msa(agg.per_block.size()), ffn(agg.per_block.size()), itp(agg.per_block.size());
    double total = 0.0;
    std::vector<double> keep(agg.keep_ratio_per_group.size(), 0.0);
    for (const auto& trace : traces) {
        const CostReport one = model_flops(cfg, trace);
        for (std::size_t i = 0; i < msa.size(); ++i) {
            msa[i] += static_cast<double>(one.per_block[i].msa);
            ffn[i] += static_cast<double>(one.per_block[i].ffn);
            itp[i] += static_cast<double>(one.per_block[i].interp);
        }
        total += one.mean_total;
        for (std::size_t i = 0; i < keep.size(); ++i) keep[i] += one.keep_ratio_per_group[i];
    }
    const double inv = 1.0 / static_cast<double>(traces.size());
    for (std::size_t i = 0; i < msa.size(); ++i) {
        agg.per_block[i].msa = static_cast<std::int64_t>(msa[i] * inv);
        agg.per_block[i].ffn = static_cast<std::int64_t>(ffn[i] * inv);
        agg.per_block[i].interp = static_cast<std::int64_t>(itp[i] * inv);
    }
    agg.mean_total = total * inv;
    for (std::size_t i = 0; i < keep.size(); ++i) agg.keep_ratio_per_group[i] = keep[i] * inv;
    agg.speedup = static_cast<double>(agg.baseline_total) / agg.mean_total;
    agg.samples = static_cast<int>(traces.size());
    return agg;
}

double linear_layer_flops(const CostConfig& cfg, const std::vector<int>& keep_trace,
                          double prune_ratio) {
    if (prune_ratio < 0.0 || prune_ratio >= 1.0) {
        throw std::invalid_argument("linear_layer_flops: prune ratio must lie in [0,1)");
    }
    double total = 0.0;
    for (int blk = 0; blk < cfg.blocks; ++blk) {
        const double tokens = static_cast<double>(keep_trace[static_cast<std::size_t>(blk)] + 1);
        const double d = static_cast<double>(cfg.d_emb);
        total += 12.0 * tokens * d * d;  // 4ND^2 projections + 8ND^2 feed-forward
    }
    return total * (1.0 - prune_ratio);
}

std::string CostReport::csv() const {
    std::string out = "block,msa_flops,ffn_flops,interpreter_flops,block_total\n";
    char buf[160];
    for (std::size_t i = 0; i < per_block.size(); ++i) {
        const BlockCost& c = per_block[i];
        std::snprintf(buf, sizeof(buf), "%zu,%lld,%lld,%lld,%lld\n", i,
                      static_cast<long long>(c.msa), static_cast<long long>(c.ffn),
                      static_cast<long long>(c.interp), static_cast<long long>(c.total()));
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "summary,mean_total=%.1f,baseline=%lld,speedup=%.6f,samples=%d\n",
                  mean_total, static_cast<long long>(baseline_total), speedup, samples);
    out += buf;
    return out;
}

}  // namespace tokendrop
