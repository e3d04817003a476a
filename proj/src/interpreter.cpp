#include "tokendrop/interpreter.hpp"

#include <cmath>
#include <stdexcept>

namespace tokendrop {

void InterpreterParams::build(int group_index, int d_emb, int interpreter_heads, bool bias, Rng& rng) {
    if (interpreter_heads <= 0 || d_emb % interpreter_heads != 0) {
        throw std::invalid_argument("interpreter heads " + std::to_string(interpreter_heads) +
                                    " must divide embedding width " + std::to_string(d_emb));
    }
    heads = interpreter_heads;
    use_bias = bias;
    const std::string pre = "interp" + std::to_string(group_index) + ".";
    policy_token = Param(pre + "policy", {d_emb});
    wq = Param(pre + "wq", {d_emb, d_emb});
    bq = Param(pre + "bq", {d_emb});
    wk = Param(pre + "wk", {d_emb, d_emb});
    bk = Param(pre + "bk", {d_emb});
    policy_token.fill_truncated_normal(rng, 0.02);
    wq.fill_truncated_normal(rng, 0.02);
    wk.fill_truncated_normal(rng, 0.02);
    bq.fill(0.0);
    bk.fill(0.0);
}

std::vector<Param*> InterpreterParams::all() {
    if (use_bias) return {&policy_token, &wq, &bq, &wk, &bk};
    return {&policy_token, &wq, &wk};
}

std::vector<const Param*> InterpreterParams::all() const {
    if (use_bias) return {&policy_token, &wq, &bq, &wk, &bk};
    return {&policy_token, &wq, &wk};
}

void GroupConfig::validate(int total_blocks) const {
    if (group_count <= 0 || blocks_per_group <= 0 || group_count * blocks_per_group != total_blocks) {
        throw std::invalid_argument("group structure " + std::to_string(group_count) + "x" +
                                    std::to_string(blocks_per_group) + " does not tile " +
                                    std::to_string(total_blocks) + " blocks");
    }
    if (threshold <= 0.0 || threshold >= 1.0) {
        throw std::invalid_argument("keep threshold must lie strictly inside (0,1)");
    }
}

int KeepDecision::kept_count() const {
    int n = 0;
    for (auto k : keep) n += k ? 1 : 0;
    return n;
}

double KeepDecision::total_log_prob() const {
    double s = 0.0;
    for (double v : log_prob) s += v;
    return s;
}

std::vector<std::uint8_t> KeepDecision::full_mask(int n_patches) const {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(n_patches), 0);
    for (std::size_t i = 0; i < token_index.size(); ++i)
        m[static_cast<std::size_t>(token_index[i])] = keep[i];
    return m;
}

ScoreSet informative_scores(Binder& b, const TokenSequence& seq, const InterpreterParams& ip) {
    if (!seq.embedded) throw std::invalid_argument("informative_scores: sequence not embedded");
    Graph& g = b.graph();
    const int d = seq.tokens.cols();
    const int hd = d / ip.heads;

    std::vector<int> live_idx;
    for (int i = 0; i < seq.n_patches; ++i)
        if (seq.live[static_cast<std::size_t>(i + 1)]) live_idx.push_back(i);
    const int m = static_cast<int>(live_idx.size());
    if (m == 0) throw std::invalid_argument("informative_scores: no live patch tokens");

    // Gather live patch rows through a selection matrix so gradients flow
    // back into the token representations.
    std::vector<double> sel(static_cast<std::size_t>(m) * static_cast<std::size_t>(seq.tokens.rows()), 0.0);
    for (int r = 0; r < m; ++r)
        sel[static_cast<std::size_t>(r * seq.tokens.rows() + live_idx[static_cast<std::size_t>(r)] + 1)] = 1.0;
    Tensor live_tokens = matmul(g.leaf({m, seq.tokens.rows()}, std::move(sel)), seq.tokens);

    Tensor q = matmul(live_tokens, b(ip.wq));                    // [m x d]
    Tensor k = matmul(b(ip.policy_token), b(ip.wk));             // [1 x d]
    if (ip.use_bias) {
        q = add_rowvec(q, b(ip.bq));
        k = add_rowvec(k, b(ip.bk));
    }

    Tensor acc;  // running sum of per-head sigmoid(dot), [m x 1]
    for (int h = 0; h < ip.heads; ++h) {
        Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
        Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
        Tensor dots = matmul(qh, transpose(kh));  // [m x 1]
        Tensor s = sigmoid(dots);
        acc = h == 0 ? s : add(acc, s);
    }
    ScoreSet out;
    out.scores = affine(acc, 1.0 / static_cast<double>(ip.heads), 0.0);
    out.token_index = std::move(live_idx);
    return out;
}

KeepDecision decide(const std::vector<double>& scores, const std::vector<int>& token_index,
                    int group, DecideMode mode, double threshold, Rng& rng) {
    if (scores.size() != token_index.size()) {
        throw std::invalid_argument("decide: " + std::to_string(scores.size()) + " scores for " +
                                    std::to_string(token_index.size()) + " tokens");
    }
    KeepDecision d;
    d.group = group;
    d.token_index = token_index;
    d.score = scores;
    d.keep.resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        d.keep[i] = mode == DecideMode::Greedy ? (scores[i] > threshold ? 1 : 0)
                                               : (rng.bernoulli(scores[i]) ? 1 : 0);
    }
    if (d.kept_count() == 0 && !scores.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < scores.size(); ++i)
            if (scores[i] > scores[best]) best = i;  // ties keep the lowest index
        d.keep[best] = 1;
        d.force_kept = true;
    }
    d.log_prob.resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        d.log_prob[i] = d.keep[i] ? std::log(scores[i]) : std::log(1.0 - scores[i]);
    }
    return d;
}

KeepDecision greedy_from_scores(const KeepDecision& d, double threshold) {
    Rng unused(0);
    return decide(d.score, d.token_index, d.group, DecideMode::Greedy, threshold, unused);
}

TokenSequence apply_decisions(const TokenSequence& seq, const KeepDecision& d) {
    if (!seq.embedded) throw std::invalid_argument("apply_decisions: sequence not embedded");
    for (std::size_t i = 0; i < d.token_index.size(); ++i) {
        const int idx = d.token_index[i];
        if (idx < 0 || idx >= seq.n_patches || !seq.live[static_cast<std::size_t>(idx + 1)]) {
            throw std::invalid_argument("apply_decisions: decision refers to token " +
                                        std::to_string(idx) + " which is not a live patch");
        }
    }
    TokenSequence out = seq;
    for (std::size_t i = 0; i < d.token_index.size(); ++i) {
        if (!d.keep[i]) out.live[static_cast<std::size_t>(d.token_index[i] + 1)] = 0;
    }
    return out;
}

}  // namespace tokendrop
