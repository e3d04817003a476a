#include "tokendrop/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "tokendrop/flops.hpp"

namespace tokendrop {

namespace {

int drop_count(int n, double ratio) {
    if (ratio < 0.0 || ratio >= 1.0) {
        throw std::invalid_argument("drop ratio must lie in [0,1), got " + std::to_string(ratio));
    }
    return static_cast<int>(std::floor(ratio * static_cast<double>(n)));
}

}  // namespace

std::vector<std::uint8_t> random_drop(int n, double ratio, std::uint64_t seed) {
    const int k = drop_count(n, ratio);
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    // partial Fisher-Yates: the first k entries become the dropped set
    for (int i = 0; i < k; ++i) {
        const int j = i + rng.uniform_int(n - i);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(n), 1);
    for (int i = 0; i < k; ++i) keep[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 0;
    return keep;
}

std::vector<std::uint8_t> keep_top_scores(const std::vector<double>& scores, double ratio) {
    const int n = static_cast<int>(scores.size());
    const int k = drop_count(n, ratio);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    // weakest first; equal scores drop the lower index
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)]; });
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(n), 1);
    for (int i = 0; i < k; ++i) keep[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 0;
    return keep;
}

std::vector<double> cls_attention_scores(const Model& m, const Image& img, int block_index) {
    if (block_index < 0 || block_index >= m.block_count()) {
        throw std::invalid_argument("attention block " + std::to_string(block_index) + " out of " +
                                    std::to_string(m.block_count()));
    }
    Graph g;
    Binder b(g);
    TokenSequence seq = embed(b, patchify(g, img, m.vit.patch_size), m.vit);
    AttentionCapture cap;
    cap.block_index = block_index;
    for (int blk = 0; blk <= block_index; ++blk) {
        seq = msa_forward(b, seq, m.vit.blocks[static_cast<std::size_t>(blk)], m.vit.heads,
                          m.vit.ln_eps, blk == block_index ? &cap : nullptr);
        seq = ffn_forward(b, seq, m.vit.blocks[static_cast<std::size_t>(blk)], m.vit.ln_eps);
    }
    return cap.cls_to_patches();
}

std::vector<std::uint8_t> attention_drop(const Model& m, const Image& img, double ratio,
                                         int block_index) {
    return keep_top_scores(cls_attention_scores(m, img, block_index), ratio);
}

std::vector<double> temporal_difference_scores(const std::vector<FrameTokens>& frames) {
    if (frames.empty()) throw std::invalid_argument("temporal difference: no frames");
    const int slots = frames[0].n_slots;
    const int width = frames[0].width;
    for (const auto& f : frames) {
        if (f.n_slots != slots || f.width != width ||
            f.values.size() != static_cast<std::size_t>(slots) * static_cast<std::size_t>(width)) {
            throw std::invalid_argument("temporal difference: inconsistent frame shape");
        }
    }
    std::vector<double> scores;
    scores.reserve(frames.size() * static_cast<std::size_t>(slots));
    for (std::size_t t = 0; t < frames.size(); ++t) {
        for (int s = 0; s < slots; ++s) {
            double acc = 0.0;
            for (int j = 0; j < width; ++j) {
                const double cur = frames[t].values[static_cast<std::size_t>(s * width + j)];
                // tokens of the first frame compare against zeros
                const double prev =
                    t == 0 ? 0.0 : frames[t - 1].values[static_cast<std::size_t>(s * width + j)];
                const double d = cur - prev;
                acc += d * d;
            }
            scores.push_back(std::sqrt(acc));
        }
    }
    return scores;
}

std::vector<std::uint8_t> temporal_difference_drop(const std::vector<FrameTokens>& frames,
                                                   double ratio) {
    return keep_top_scores(temporal_difference_scores(frames), ratio);
}

std::vector<double> learned_scores(const Model& m, const Image& img, int group) {
    Graph g;
    Binder b(g);
    std::vector<GroupDirective> dirs(static_cast<std::size_t>(m.groups.group_count));
    for (int j = 0; j < group; ++j) dirs[static_cast<std::size_t>(j)] = GroupDirective::greedy();
    dirs[static_cast<std::size_t>(group)] = GroupDirective::greedy();
    Rng unused(0);
    Rollout roll = run_model(b, m, img, dirs, unused);
    std::vector<KeepDecision> history;
    for (int j = 0; j <= group; ++j)
        history.push_back(roll.groups[static_cast<std::size_t>(j)].decision);
    // full-length scores, zeros where earlier groups already dropped
    std::vector<double> out(static_cast<std::size_t>(m.vit.n_patches()), 0.0);
    const KeepDecision& d = history.back();
    for (std::size_t i = 0; i < d.token_index.size(); ++i)
        out[static_cast<std::size_t>(d.token_index[i])] = d.score[i];
    return out;
}

std::vector<std::uint8_t> learned_drop(const Model& m, const Image& img, double ratio) {
    return keep_top_scores(learned_scores(m, img, 0), ratio);
}

std::vector<Param*> linear_weight_params(Model& m) {
    std::vector<Param*> out;
    for (auto& bp : m.vit.blocks) {
        out.push_back(&bp.wq);
        out.push_back(&bp.wk);
        out.push_back(&bp.wv);
        out.push_back(&bp.wo);
        out.push_back(&bp.w1);
        out.push_back(&bp.w2);
    }
    return out;
}

int magnitude_prune(Model& m, double prune_ratio) {
    if (prune_ratio < 0.0 || prune_ratio >= 1.0) {
        throw std::invalid_argument("prune ratio must lie in [0,1), got " + std::to_string(prune_ratio));
    }
    int touched = 0;
    for (Param* p : linear_weight_params(m)) {
        const int n = static_cast<int>(p->numel());
        const int k = static_cast<int>(std::floor(prune_ratio * static_cast<double>(n)));
        if (k == 0) continue;
        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return std::fabs(p->value[static_cast<std::size_t>(a)]) <
                   std::fabs(p->value[static_cast<std::size_t>(b)]);
        });
        for (int i = 0; i < k; ++i) p->value[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 0.0;
        ++touched;
    }
    return touched;
}

namespace {

CostConfig cost_config_of(const Model& m) {
    CostConfig cfg;
    cfg.blocks = m.block_count();
    cfg.d_emb = m.vit.d_emb;
    cfg.n_patches = m.vit.n_patches();
    cfg.group_count = m.groups.group_count;
    cfg.blocks_per_group = m.groups.blocks_per_group;
    cfg.interp_heads = m.interpreters.empty() ? 0 : m.interpreters[0].heads;
    return cfg;
}

// threshold <= 0 is the dense anchor: interpreters off, every token kept.
CurvePoint measure(const Model& pruned, const Dataset& data, double threshold, double prune_ratio,
                   double dense_linear) {
    const EvalSummary ev = evaluate_model(pruned, data, -1, threshold, threshold <= 0.0);
    const CostConfig cfg = cost_config_of(pruned);
    double linear = 0.0;
    for (const auto& trace : ev.keep_traces) linear += linear_layer_flops(cfg, trace, prune_ratio);
    linear /= static_cast<double>(ev.keep_traces.size());
    CurvePoint pt;
    pt.flops_fraction = linear / dense_linear;
    pt.accuracy = ev.accuracy;
    pt.threshold = threshold;
    pt.prune_ratio = prune_ratio;
    return pt;
}

}  // namespace

CurveSet combined_sweep(const Model& m, const Dataset& eval_data,
                        const std::vector<double>& thresholds,
                        const std::vector<double>& prune_ratios) {
    if (thresholds.empty() || prune_ratios.empty()) {
        throw std::invalid_argument("combined_sweep: need at least one threshold and one ratio");
    }
    const CostConfig cfg = cost_config_of(m);
    const std::vector<int> full(static_cast<std::size_t>(cfg.blocks), cfg.n_patches);
    const double dense_linear = linear_layer_flops(cfg, full, 0.0);

    // Pruning mutates weights; sweep over copies starting from the lightest
    // ratio so each curve reuses one progressively pruned model.
    CurveSet out;

    {
        Model pruned = m;
        for (double r : prune_ratios) {
            magnitude_prune(pruned, r);  // idempotent for repeated ratios, monotone overall
            out.prune_only.push_back(measure(pruned, eval_data, thresholds.front(), r, dense_linear));
        }
    }
    for (double t : thresholds) {
        out.tokens_only.push_back(measure(m, eval_data, t, prune_ratios.front(), dense_linear));
    }

    {
        Model pruned = m;
        std::size_t ti = 0, ri = 0;
        magnitude_prune(pruned, prune_ratios[0]);
        CurvePoint cur = measure(pruned, eval_data, thresholds[0], prune_ratios[0], dense_linear);
        out.combined.push_back(cur);
        while (ti + 1 < thresholds.size() || ri + 1 < prune_ratios.size()) {
            CurvePoint cand_t, cand_r;
            bool has_t = false, has_r = false;
            if (ti + 1 < thresholds.size()) {
                cand_t = measure(pruned, eval_data, thresholds[ti + 1], prune_ratios[ri], dense_linear);
                has_t = true;
            }
            if (ri + 1 < prune_ratios.size()) {
                Model next = pruned;
                magnitude_prune(next, prune_ratios[ri + 1]);
                cand_r = measure(next, eval_data, thresholds[ti], prune_ratios[ri + 1], dense_linear);
                has_r = true;
            }
            // accuracy lost per unit of cost saved; saving nothing is a dead move
            const auto loss_rate = [&](const CurvePoint& c) {
                const double saved = cur.flops_fraction - c.flops_fraction;
                return (cur.accuracy - c.accuracy) / std::max(saved, 1e-9);
            };
            const bool take_t = has_t && (!has_r || loss_rate(cand_t) <= loss_rate(cand_r));
            if (take_t) {
                ++ti;
                cur = cand_t;
            } else {
                ++ri;
                magnitude_prune(pruned, prune_ratios[ri]);
                cur = cand_r;
            }
            out.combined.push_back(cur);
        }
    }
    return out;
}

std::string CurveSet::csv() const {
    std::string out = "method,flops_fraction,accuracy,threshold,prune_ratio\n";
    char buf[160];
    const auto emit = [&](const char* tag, const std::vector<CurvePoint>& pts) {
        for (const CurvePoint& p : pts) {
            std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.4f,%.4f\n", tag, p.flops_fraction,
                          p.accuracy, p.threshold, p.prune_ratio);
            out += buf;
        }
    };
    emit("prune_only", prune_only);
    emit("tokens_only", tokens_only);
    emit("combined", combined);
    return out;
}

}  // namespace tokendrop
