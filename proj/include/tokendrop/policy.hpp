#pragma once

#include <array>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tokendrop/data.hpp"
#include "tokendrop/interpreter.hpp"

namespace tokendrop {

// --- model ------------------------------------------------------------------

// Backbone plus one interpreter per group. `trained_interpreters` tracks how
// many groups have finished their policy phase; evaluation only activates
// those (the rest keep every token).
struct Model {
    VitParams vit;
    std::vector<InterpreterParams> interpreters;
    GroupConfig groups;
    int trained_interpreters = 0;

    void build(const VitParams& shape, const GroupConfig& gc, int interp_heads, bool interp_bias,
               Rng& rng);
    std::vector<Param*> all_params();
    int block_count() const { return static_cast<int>(vit.blocks.size()); }
};

// --- rollout ----------------------------------------------------------------

struct GroupDirective {
    enum class Kind { KeepAll, Greedy, Sample, Forced };
    Kind kind = Kind::KeepAll;
    const KeepDecision* forced_decision = nullptr;
    bool with_scores = false;  // build graph scores even for Forced

    static GroupDirective keep_all() { return {}; }
    static GroupDirective greedy() { return {Kind::Greedy, nullptr, true}; }
    static GroupDirective sample() { return {Kind::Sample, nullptr, true}; }
    static GroupDirective forced(const KeepDecision* d, bool scores = false) {
        return {Kind::Forced, d, scores};
    }
};

struct GroupTrace {
    bool scored = false;
    KeepDecision decision;  // empty for KeepAll
    ScoreSet scores;        // valid while the rollout's graph is alive, if scored
    int live_at_entry = 0;  // patch tokens entering the group
    int live_in_blocks = 0; // patch tokens alive through the group's blocks
};

struct Rollout {
    Tensor logits;
    std::vector<double> logit_values;
    int predicted = -1;
    std::vector<GroupTrace> groups;
    std::vector<int> keep_trace;  // live patch count per block
};

// One full forward pass with per-group decision directives. Scores are
// computed on group-entry token values; decisions apply before the group's
// first block.
Rollout run_model(Binder& b, const Model& m, const Image& img,
                  const std::vector<GroupDirective>& dirs, Rng& rng,
                  AttentionCapture* capture = nullptr);

// --- reward and REINFORCE ----------------------------------------------------

struct RewardConfig {
    double tau = 1.5;     // penalty for a wrong prediction
    bool squared = true;  // squared keep fraction (vs linear)
};

// 1 - (keep_count/N)^2 when correct (linear if !squared), else -tau.
double reward(int keep_count, int n, bool correct, const RewardConfig& cfg);

struct EpisodeRecord {
    std::vector<KeepDecision> decisions;  // sampled decisions, groups 0..j
    KeepDecision greedy;                  // baseline decision at group j
    double reward_sampled = 0.0;
    double reward_greedy = 0.0;
    double advantage = 0.0;  // reward_sampled - reward_greedy, exactly
    bool correct = false;
    int kept_sampled = 0, kept_greedy = 0;
    int live_at_entry = 0;
};

// Single-episode policy-gradient contribution for interpreter `group`:
// draws u ~ pi at groups 0..group (earlier interpreters sampled with their
// frozen parameters), evaluates the self-critical baseline with the same
// earlier-group masks and the greedy configuration at `group`, and adds
// advantage * d(sum_i log[I u_i + (1-I)(1-u_i)])/dW to `grads`.
// The reward's keep fraction is measured against the tokens entering the
// group. Per-sample baselines; a batch-mean baseline would also satisfy the
// estimator but is not what self-critical training does.
EpisodeRecord episode_gradient(const Model& m, const Image& img, int label, int group,
                               const RewardConfig& cfg, Rng& rng, GradMap& grads);

// --- optimizer ---------------------------------------------------------------

struct AdamConfig {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

class Adam {
  public:
    struct Slot {
        std::vector<double> m, v;
    };

    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(const std::vector<Param*>& params, const GradMap& grads, double lr);
    void reset() { slots_.clear(); t_ = 0; }

    long t() const { return t_; }
    void set_t(long t) { t_ = t; }
    std::map<std::string, Slot>& slots() { return slots_; }
    const std::map<std::string, Slot>& slots() const { return slots_; }

  private:
    AdamConfig cfg_;
    std::map<std::string, Slot> slots_;
    long t_ = 0;
};

double cosine_lr(double base, int epoch, int total_epochs);

// --- training steps ----------------------------------------------------------

struct StepStats {
    double mean_reward = 0.0;
    double mean_loss = 0.0;
    double accuracy = 0.0;
    std::vector<double> mean_keep_per_group;
};

// REINFORCE update of interpreter `group` over one mini-batch (mean
// gradient). Aborts on non-finite gradients.
StepStats reinforce_step(Model& m, const Dataset& data, const std::vector<int>& batch, int group,
                         const RewardConfig& cfg, Rng& rng, Adam& opt, double lr);

// Cross-entropy update of the blocks in groups >= first_group; interpreters
// 0..first_group stay frozen and decide greedily.
StepStats finetune_step(Model& m, const Dataset& data, const std::vector<int>& batch,
                        int first_group, Adam& opt, double lr);

// Plain backbone training step (no masks, every parameter updates).
StepStats backbone_step(Model& m, const Dataset& data, const std::vector<int>& batch, Adam& opt,
                        double lr);

// --- curriculum ---------------------------------------------------------------

struct TrainConfig {
    int backbone_epochs = 30;
    int interpreter_epochs = 10;  // per group
    int block_epochs = 20;        // per group
    int batch_size = 16;
    double lr_backbone = 5e-4;
    double lr_interpreter = 1e-3;
    double lr_blocks = 4e-5;
    RewardConfig reward;
};

enum class TrainPhase : std::uint32_t { Backbone = 0, Interpreter = 1, Blocks = 2, Done = 3 };

const char* phase_name(TrainPhase p);

struct TrainCursor {
    TrainPhase phase = TrainPhase::Backbone;
    int group = 0;          // current curriculum group (unused in backbone phase)
    int epoch_in_phase = 0; // next epoch to run
    int global_epoch = 0;
};

using LogFn = std::function<void(const std::string&)>;

// Everything beyond the parameters that the next epoch depends on; saving
// this alongside the model makes a run resumable bit-exactly.
struct TrainState {
    TrainCursor cursor;
    std::array<std::uint64_t, 4> rng_state{};
    long adam_t = 0;
    std::map<std::string, Adam::Slot> adam_slots;
};

// Phase-by-phase curriculum driver: backbone pre-training, then per group a
// policy phase followed by a block fine-tune phase. The embedding stack and
// classifier head are frozen after the backbone phase; each epoch audits the
// frozen set with SHA-256 before and after and refuses to continue on drift.
class Trainer {
  public:
    Trainer(Model& m, const Dataset& train, const TrainConfig& cfg, std::uint64_t seed);

    bool finished() const { return cursor_.phase == TrainPhase::Done; }
    void run_epoch(const LogFn& log);
    void run_to_completion(const LogFn& log) {
        while (!finished()) run_epoch(log);
    }

    const TrainCursor& cursor() const { return cursor_; }
    TrainState snapshot() const;
    void restore(const TrainState& state);

  private:
    void advance_phase();
    std::vector<Param*> frozen_params() const;
    std::vector<int> shuffled_indices();
    int phase_epochs(TrainPhase p) const;
    double phase_lr(TrainPhase p, int epoch) const;

    Model& model_;
    const Dataset& data_;
    TrainConfig cfg_;
    TrainCursor cursor_;
    Adam opt_;
    Rng rng_;
};

// --- evaluation ----------------------------------------------------------------

struct EvalSummary {
    double accuracy = 0.0;
    std::vector<double> mean_keep_per_group;
    std::vector<std::vector<int>> keep_traces;  // per sample, live patches per block
    std::vector<int> predictions;
};

// Greedy evaluation. active_groups < 0 uses the model's trained count;
// keep_all forces every token live regardless. threshold <= 0 uses the
// model's configured threshold.
EvalSummary evaluate_model(const Model& m, const Dataset& data, int active_groups = -1,
                           double threshold = 0.0, bool keep_all = false);

}  // namespace tokendrop
