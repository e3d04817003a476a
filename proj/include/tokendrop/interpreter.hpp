#pragma once

#include <cstdint>
#include <vector>

#include "tokendrop/vit.hpp"

namespace tokendrop {

// Per-group token scorer: a learned policy token compared against every
// live patch token through per-head linear maps, sigmoid per head, mean
// over heads.
struct InterpreterParams {
    Param policy_token;  // [d_emb]
    Param wq, bq;        // patch-token projection, per-head column slices
    Param wk, bk;        // policy-token projection
    int heads = 4;
    bool use_bias = true;

    void build(int group_index, int d_emb, int interpreter_heads, bool bias, Rng& rng);
    std::vector<Param*> all();
    std::vector<const Param*> all() const;
};

struct GroupConfig {
    int group_count = 3;      // interpreters in the stack
    int blocks_per_group = 2;
    double threshold = 0.5;   // keep cutoff on the score

    void validate(int total_blocks) const;
};

enum class DecideMode { Greedy, Sample };

// Outcome of one interpreter evaluation over the tokens live at group entry.
struct KeepDecision {
    int group = 0;
    std::vector<int> token_index;     // patch indices, ascending
    std::vector<double> score;        // per entry, in (0,1)
    std::vector<std::uint8_t> keep;   // u_i
    std::vector<double> log_prob;     // of the realized outcome
    bool force_kept = false;          // all-drop rescued by keeping the best token

    int kept_count() const;
    double total_log_prob() const;
    // keep flags spread over the full patch range (dropped-before = 0)
    std::vector<std::uint8_t> full_mask(int n_patches) const;
};

// Differentiable scores for the live patch tokens, one per entry of
// `token_index` order (ascending patch index). Class token is never scored.
struct ScoreSet {
    Tensor scores;                 // [live x 1]
    std::vector<int> token_index;  // patch index per row
};

ScoreSet informative_scores(Binder& b, const TokenSequence& seq, const InterpreterParams& ip);

// Greedy: keep iff score > threshold. Sample: keep ~ Bernoulli(score).
// If every token would drop, the highest-scoring one (lowest index on
// ties) is kept and `force_kept` set, so attention never goes empty.
KeepDecision decide(const std::vector<double>& scores, const std::vector<int>& token_index,
                    int group, DecideMode mode, double threshold, Rng& rng);

// Greedy counterpart of an existing decision, from the same scores.
KeepDecision greedy_from_scores(const KeepDecision& d, double threshold);

// Clears live flags for dropped tokens; the class token is untouched.
TokenSequence apply_decisions(const TokenSequence& seq, const KeepDecision& d);

}  // namespace tokendrop
