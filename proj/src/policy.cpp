#include "tokendrop/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "tokendrop/sha256.hpp"

namespace tokendrop {

void Model::build(const VitParams& shape, const GroupConfig& gc, int interp_heads, bool interp_bias,
                  Rng& rng) {
    gc.validate(gc.group_count * gc.blocks_per_group);
    vit = shape;
    vit.build(gc.group_count * gc.blocks_per_group, rng);
    groups = gc;
    trained_interpreters = 0;
    interpreters.clear();
    interpreters.resize(static_cast<std::size_t>(gc.group_count));
    const int ih = interp_heads > 0 ? interp_heads : vit.heads;
    for (int j = 0; j < gc.group_count; ++j) {
        interpreters[static_cast<std::size_t>(j)].build(j, vit.d_emb, ih, interp_bias, rng);
    }
}

std::vector<Param*> Model::all_params() {
    std::vector<Param*> out = vit.all_params();
    for (auto& ip : interpreters)
        for (Param* p : ip.all()) out.push_back(p);
    return out;
}

bool GradMap::all_finite() const {
    for (const auto& [_, g] : grads_)
        for (double v : g)
            if (!std::isfinite(v)) return false;
    return true;
}

Rollout run_model(Binder& b, const Model& m, const Image& img,
                  const std::vector<GroupDirective>& dirs, Rng& rng, AttentionCapture* capture) {
    if (static_cast<int>(dirs.size()) != m.groups.group_count) {
        throw std::invalid_argument("run_model: " + std::to_string(dirs.size()) +
                                    " directives for " + std::to_string(m.groups.group_count) +
                                    " groups");
    }
    Rollout out;
    out.groups.resize(dirs.size());

    TokenSequence seq = embed(b, patchify(b.graph(), img, m.vit.patch_size), m.vit);
    const int per_group = m.groups.blocks_per_group;

    for (int gidx = 0; gidx < m.groups.group_count; ++gidx) {
        const GroupDirective& dir = dirs[static_cast<std::size_t>(gidx)];
        GroupTrace& trace = out.groups[static_cast<std::size_t>(gidx)];
        trace.live_at_entry = seq.live_patch_count();

        const bool wants_scores =
            dir.with_scores || dir.kind == GroupDirective::Kind::Greedy ||
            dir.kind == GroupDirective::Kind::Sample;
        if (wants_scores) {
            trace.scores = informative_scores(b, seq, m.interpreters[static_cast<std::size_t>(gidx)]);
            trace.scored = true;
        }

        switch (dir.kind) {
            case GroupDirective::Kind::KeepAll:
                break;
            case GroupDirective::Kind::Greedy:
            case GroupDirective::Kind::Sample: {
                const auto mode = dir.kind == GroupDirective::Kind::Greedy ? DecideMode::Greedy
                                                                           : DecideMode::Sample;
                trace.decision = decide(trace.scores.scores.data(), trace.scores.token_index, gidx,
                                        mode, m.groups.threshold, rng);
                seq = apply_decisions(seq, trace.decision);
                break;
            }
            case GroupDirective::Kind::Forced: {
                if (!dir.forced_decision) throw std::invalid_argument("run_model: forced directive without decision");
                trace.decision = *dir.forced_decision;
                if (trace.scored) {
                    // refresh log-probs against the freshly computed scores
                    const auto& s = trace.scores.scores.data();
                    trace.decision.score = s;
                    for (std::size_t i = 0; i < s.size(); ++i) {
                        trace.decision.log_prob[i] =
                            trace.decision.keep[i] ? std::log(s[i]) : std::log(1.0 - s[i]);
                    }
                }
                seq = apply_decisions(seq, trace.decision);
                break;
            }
        }
        trace.live_in_blocks = seq.live_patch_count();

        for (int blk = gidx * per_group; blk < (gidx + 1) * per_group; ++blk) {
            AttentionCapture* cap = (capture && capture->block_index == blk) ? capture : nullptr;
            seq = msa_forward(b, seq, m.vit.blocks[static_cast<std::size_t>(blk)], m.vit.heads,
                              m.vit.ln_eps, cap);
            seq = ffn_forward(b, seq, m.vit.blocks[static_cast<std::size_t>(blk)], m.vit.ln_eps);
            out.keep_trace.push_back(trace.live_in_blocks);
        }
    }

    out.logits = classifier_logits(b, seq, m.vit);
    out.logit_values = out.logits.data();
    out.predicted = static_cast<int>(std::max_element(out.logit_values.begin(), out.logit_values.end()) -
                                     out.logit_values.begin());
    return out;
}

double reward(int keep_count, int n, bool correct, const RewardConfig& cfg) {
    if (n < 1 || keep_count < 0 || keep_count > n) {
        throw std::invalid_argument("reward: keep_count " + std::to_string(keep_count) +
                                    " out of [0," + std::to_string(n) + "]");
    }
    if (!correct) return -cfg.tau;
    const double frac = static_cast<double>(keep_count) / static_cast<double>(n);
    return cfg.squared ? 1.0 - frac * frac : 1.0 - frac;
}

namespace {

// sum_i log[I_i u_i + (1 - I_i)(1 - u_i)] as a graph scalar.
Tensor decision_log_prob(Graph& g, const ScoreSet& scores, const KeepDecision& d) {
    const std::size_t n = d.keep.size();
    std::vector<double> u(n), one_minus_u(n);
    for (std::size_t i = 0; i < n; ++i) {
        u[i] = d.keep[i] ? 1.0 : 0.0;
        one_minus_u[i] = 1.0 - u[i];
    }
    Tensor u_t = g.leaf({static_cast<int>(n), 1}, std::move(u));
    Tensor mu_t = g.leaf({static_cast<int>(n), 1}, std::move(one_minus_u));
    Tensor pi = add(mul(scores.scores, u_t), mul(affine(scores.scores, -1.0, 1.0), mu_t));
    return sum_all(vlog(pi));
}

std::vector<GroupDirective> sampled_directives(int group_count, int group) {
    std::vector<GroupDirective> dirs(static_cast<std::size_t>(group_count));
    for (int j = 0; j <= group; ++j) dirs[static_cast<std::size_t>(j)] = GroupDirective::sample();
    return dirs;
}

}  // namespace

EpisodeRecord episode_gradient(const Model& m, const Image& img, int label, int group,
                               const RewardConfig& cfg, Rng& rng, GradMap& grads) {
    EpisodeRecord rec;

    Graph g;
    Binder b(g);
    Rollout sampled = run_model(b, m, img, sampled_directives(m.groups.group_count, group), rng);
    for (int j = 0; j <= group; ++j)
        rec.decisions.push_back(sampled.groups[static_cast<std::size_t>(j)].decision);

    const GroupTrace& jt = sampled.groups[static_cast<std::size_t>(group)];
    rec.live_at_entry = jt.live_at_entry;
    rec.kept_sampled = jt.decision.kept_count();
    rec.correct = sampled.predicted == label;
    rec.reward_sampled = reward(rec.kept_sampled, rec.live_at_entry, rec.correct, cfg);

    // Baseline pass: identical masks everywhere except the greedy
    // configuration at `group`; no scores needed the second time.
    rec.greedy = greedy_from_scores(jt.decision, m.groups.threshold);
    rec.kept_greedy = rec.greedy.kept_count();
    {
        Graph g2;
        Binder b2(g2);
        std::vector<GroupDirective> dirs(static_cast<std::size_t>(m.groups.group_count));
        for (int j = 0; j < group; ++j)
            dirs[static_cast<std::size_t>(j)] =
                GroupDirective::forced(&rec.decisions[static_cast<std::size_t>(j)]);
        dirs[static_cast<std::size_t>(group)] = GroupDirective::forced(&rec.greedy);
        Rng unused(0);
        Rollout base = run_model(b2, m, img, dirs, unused);
        rec.reward_greedy = reward(rec.kept_greedy, rec.live_at_entry, base.predicted == label, cfg);
    }
    rec.advantage = rec.reward_sampled - rec.reward_greedy;

    if (rec.advantage != 0.0) {
        // Ascend A * grad(log pi): minimize -A * log pi.
        Tensor loss = affine(decision_log_prob(g, jt.scores, jt.decision), -rec.advantage, 0.0);
        g.backward(loss);
        b.harvest(grads, m.interpreters[static_cast<std::size_t>(group)].all());
    }
    return rec;
}

void Adam::step(const std::vector<Param*>& params, const GradMap& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Param* p : params) {
        const std::vector<double>* g = grads.find(*p);
        auto& slot = slots_[p->name];
        if (slot.m.size() != p->numel()) {
            slot.m.assign(p->numel(), 0.0);
            slot.v.assign(p->numel(), 0.0);
        }
        for (std::size_t i = 0; i < p->numel(); ++i) {
            const double gi = g ? (*g)[i] : 0.0;
            slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * gi;
            slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            p->value[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

double cosine_lr(double base, int epoch, int total_epochs) {
    if (total_epochs <= 1) return base;
    return base * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                                        static_cast<double>(total_epochs)));
}

StepStats reinforce_step(Model& m, const Dataset& data, const std::vector<int>& batch, int group,
                         const RewardConfig& cfg, Rng& rng, Adam& opt, double lr) {
    StepStats stats;
    stats.mean_keep_per_group.assign(static_cast<std::size_t>(m.groups.group_count), 0.0);
    GradMap grads;
    int correct = 0;
    for (int idx : batch) {
        EpisodeRecord rec = episode_gradient(m, data.images[static_cast<std::size_t>(idx)],
                                             data.labels[static_cast<std::size_t>(idx)], group, cfg,
                                             rng, grads);
        stats.mean_reward += rec.reward_sampled;
        correct += rec.correct ? 1 : 0;
        // keep ratio per group = patches alive through that group's blocks
        for (int j = 0; j < m.groups.group_count; ++j) {
            const int jj = std::min(j, group);
            const KeepDecision& d = rec.decisions[static_cast<std::size_t>(jj)];
            stats.mean_keep_per_group[static_cast<std::size_t>(j)] +=
                static_cast<double>(d.kept_count()) / m.vit.n_patches();
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    grads.scale(inv);
    if (!grads.all_finite()) {
        throw std::runtime_error("reinforce_step: non-finite policy gradient for interpreter " +
                                 std::to_string(group));
    }
    stats.mean_reward *= inv;
    stats.accuracy = static_cast<double>(correct) * inv;
    for (double& v : stats.mean_keep_per_group) v *= inv;
    opt.step(m.interpreters[static_cast<std::size_t>(group)].all(), grads, lr);
    return stats;
}

namespace {

StepStats cross_entropy_pass(Model& m, const Dataset& data, const std::vector<int>& batch,
                             int active_interpreters, const std::vector<Param*>& trainable,
                             Adam& opt, double lr) {
    StepStats stats;
    stats.mean_keep_per_group.assign(static_cast<std::size_t>(m.groups.group_count), 0.0);
    GradMap grads;
    int correct = 0;
    const double inv = 1.0 / static_cast<double>(batch.size());
    Rng unused(0);
    for (int idx : batch) {
        Graph g;
        Binder b(g);
        std::vector<GroupDirective> dirs(static_cast<std::size_t>(m.groups.group_count));
        for (int j = 0; j < active_interpreters; ++j)
            dirs[static_cast<std::size_t>(j)] = GroupDirective::greedy();
        Rollout roll = run_model(b, m, data.images[static_cast<std::size_t>(idx)], dirs, unused);
        Tensor loss = affine(cross_entropy(roll.logits, data.labels[static_cast<std::size_t>(idx)]),
                             inv, 0.0);
        stats.mean_loss += loss.scalar();
        correct += roll.predicted == data.labels[static_cast<std::size_t>(idx)] ? 1 : 0;
        for (int j = 0; j < m.groups.group_count; ++j)
            stats.mean_keep_per_group[static_cast<std::size_t>(j)] +=
                static_cast<double>(roll.groups[static_cast<std::size_t>(j)].live_in_blocks) /
                m.vit.n_patches();
        g.backward(loss);
        std::vector<const Param*> only(trainable.begin(), trainable.end());
        b.harvest(grads, only);
    }
    if (!grads.all_finite()) throw std::runtime_error("cross-entropy pass produced non-finite gradients");
    stats.accuracy = static_cast<double>(correct) * inv;
    for (double& v : stats.mean_keep_per_group) v *= inv;
    opt.step(trainable, grads, lr);
    return stats;
}

}  // namespace

StepStats finetune_step(Model& m, const Dataset& data, const std::vector<int>& batch,
                        int first_group, Adam& opt, double lr) {
    const std::vector<Param*> trainable =
        m.vit.block_params(first_group * m.groups.blocks_per_group, m.block_count() - 1);
    return cross_entropy_pass(m, data, batch, first_group + 1, trainable, opt, lr);
}

StepStats backbone_step(Model& m, const Dataset& data, const std::vector<int>& batch, Adam& opt,
                        double lr) {
    return cross_entropy_pass(m, data, batch, 0, m.vit.all_params(), opt, lr);
}

const char* phase_name(TrainPhase p) {
    switch (p) {
        case TrainPhase::Backbone: return "backbone";
        case TrainPhase::Interpreter: return "interpreter";
        case TrainPhase::Blocks: return "blocks";
        case TrainPhase::Done: return "done";
    }
    return "?";
}

Trainer::Trainer(Model& m, const Dataset& train, const TrainConfig& cfg, std::uint64_t seed)
    : model_(m), data_(train), cfg_(cfg), rng_(seed) {
    if (train.size() == 0) throw std::invalid_argument("trainer: empty dataset");
    if (cfg.batch_size <= 0) throw std::invalid_argument("trainer: batch size must be positive");
    if (phase_epochs(cursor_.phase) == 0) advance_phase();
}

int Trainer::phase_epochs(TrainPhase p) const {
    switch (p) {
        case TrainPhase::Backbone: return cfg_.backbone_epochs;
        case TrainPhase::Interpreter: return cfg_.interpreter_epochs;
        case TrainPhase::Blocks: return cfg_.block_epochs;
        case TrainPhase::Done: return 0;
    }
    return 0;
}

double Trainer::phase_lr(TrainPhase p, int epoch) const {
    switch (p) {
        case TrainPhase::Backbone: return cosine_lr(cfg_.lr_backbone, epoch, cfg_.backbone_epochs);
        case TrainPhase::Interpreter:
            return cosine_lr(cfg_.lr_interpreter, epoch, cfg_.interpreter_epochs);
        case TrainPhase::Blocks: return cosine_lr(cfg_.lr_blocks, epoch, cfg_.block_epochs);
        case TrainPhase::Done: return 0.0;
    }
    return 0.0;
}

std::vector<int> Trainer::shuffled_indices() {
    std::vector<int> idx(data_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i) {
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(rng_.uniform_int(i + 1))]);
    }
    return idx;
}

std::vector<Param*> Trainer::frozen_params() const {
    std::vector<Param*> out;
    Model& m = model_;
    if (cursor_.phase == TrainPhase::Backbone) return out;  // everything trains

    for (Param* p : m.vit.embedding_params()) out.push_back(p);
    out.push_back(&m.vit.head_w);
    out.push_back(&m.vit.head_b);
    const int per = m.groups.blocks_per_group;
    if (cursor_.phase == TrainPhase::Interpreter) {
        for (Param* p : m.vit.block_params(0, m.block_count() - 1)) out.push_back(p);
        for (int j = 0; j < m.groups.group_count; ++j) {
            if (j == cursor_.group) continue;
            for (Param* p : m.interpreters[static_cast<std::size_t>(j)].all()) out.push_back(p);
        }
    } else {  // Blocks
        if (cursor_.group > 0)
            for (Param* p : m.vit.block_params(0, cursor_.group * per - 1)) out.push_back(p);
        for (auto& ip : m.interpreters)
            for (Param* p : ip.all()) out.push_back(p);
    }
    return out;
}

namespace {

std::array<std::uint8_t, 32> hash_params(const std::vector<Param*>& params) {
    Sha256 h;
    for (const Param* p : params) {
        h.update(p->name.data(), p->name.size());
        h.update(p->value.data(), p->value.size() * sizeof(double));
    }
    return h.digest();
}

std::string format_stats(const TrainCursor& c, const StepStats& s, double lr, bool reward_phase) {
    char buf[256];
    std::string keep;
    for (std::size_t i = 0; i < s.mean_keep_per_group.size(); ++i) {
        char k[32];
        std::snprintf(k, sizeof(k), "%s%.4f", i ? "," : "", s.mean_keep_per_group[i]);
        keep += k;
    }
    std::snprintf(buf, sizeof(buf),
                  "epoch=%d phase=%s group=%d epoch_in_phase=%d loss=%.6f reward=%.6f acc=%.6f "
                  "keep=%s lr=%.8f",
                  c.global_epoch, phase_name(c.phase), c.group, c.epoch_in_phase,
                  reward_phase ? 0.0 : s.mean_loss, reward_phase ? s.mean_reward : 0.0, s.accuracy,
                  keep.empty() ? "-" : keep.c_str(), lr);
    return std::string(buf);
}

}  // namespace

void Trainer::run_epoch(const LogFn& log) {
    if (finished()) throw std::logic_error("trainer: already finished");

    const auto frozen = frozen_params();
    const auto before = hash_params(frozen);

    const double lr = phase_lr(cursor_.phase, cursor_.epoch_in_phase);
    const std::vector<int> order = shuffled_indices();

    StepStats epoch_stats;
    epoch_stats.mean_keep_per_group.assign(static_cast<std::size_t>(model_.groups.group_count), 0.0);
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg_.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch_size));
        std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                               order.begin() + static_cast<std::ptrdiff_t>(end));
        StepStats s;
        switch (cursor_.phase) {
            case TrainPhase::Backbone:
                s = backbone_step(model_, data_, batch, opt_, lr);
                break;
            case TrainPhase::Interpreter:
                s = reinforce_step(model_, data_, batch, cursor_.group, cfg_.reward, rng_, opt_, lr);
                break;
            case TrainPhase::Blocks:
                s = finetune_step(model_, data_, batch, cursor_.group, opt_, lr);
                break;
            case TrainPhase::Done:
                return;
        }
        epoch_stats.mean_reward += s.mean_reward;
        epoch_stats.mean_loss += s.mean_loss;
        epoch_stats.accuracy += s.accuracy;
        for (std::size_t j = 0; j < s.mean_keep_per_group.size(); ++j)
            epoch_stats.mean_keep_per_group[j] += s.mean_keep_per_group[j];
        ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    epoch_stats.mean_reward *= inv;
    epoch_stats.mean_loss *= inv;
    epoch_stats.accuracy *= inv;
    for (double& v : epoch_stats.mean_keep_per_group) v *= inv;

    if (hash_params(frozen) != before) {
        throw std::logic_error("trainer: frozen parameters changed during " +
                               std::string(phase_name(cursor_.phase)) + " epoch");
    }

    if (log) log(format_stats(cursor_, epoch_stats, lr, cursor_.phase == TrainPhase::Interpreter));

    ++cursor_.epoch_in_phase;
    ++cursor_.global_epoch;
    if (cursor_.epoch_in_phase >= phase_epochs(cursor_.phase)) advance_phase();
}

TrainState Trainer::snapshot() const {
    TrainState st;
    st.cursor = cursor_;
    st.rng_state = rng_.state();
    st.adam_t = opt_.t();
    st.adam_slots = opt_.slots();
    return st;
}

void Trainer::restore(const TrainState& state) {
    cursor_ = state.cursor;
    rng_.set_state(state.rng_state);
    opt_.set_t(state.adam_t);
    opt_.slots() = state.adam_slots;
}

void Trainer::advance_phase() {
    // Skip over zero-length phases so a schedule with e.g. no backbone
    // epochs still progresses.
    do {
        switch (cursor_.phase) {
            case TrainPhase::Backbone:
                cursor_.phase = TrainPhase::Interpreter;
                cursor_.group = 0;
                break;
            case TrainPhase::Interpreter:
                // a skipped (zero-epoch) policy phase trains nothing
                if (cfg_.interpreter_epochs > 0) {
                    model_.trained_interpreters =
                        std::max(model_.trained_interpreters, cursor_.group + 1);
                }
                cursor_.phase = TrainPhase::Blocks;
                break;
            case TrainPhase::Blocks:
                if (cursor_.group + 1 < model_.groups.group_count) {
                    cursor_.phase = TrainPhase::Interpreter;
                    ++cursor_.group;
                } else {
                    cursor_.phase = TrainPhase::Done;
                }
                break;
            case TrainPhase::Done:
                return;
        }
        cursor_.epoch_in_phase = 0;
        opt_.reset();  // fresh optimizer per phase
    } while (cursor_.phase != TrainPhase::Done && phase_epochs(cursor_.phase) == 0);
}

EvalSummary evaluate_model(const Model& m, const Dataset& data, int active_groups, double threshold,
                           bool keep_all) {
    EvalSummary out;
    out.mean_keep_per_group.assign(static_cast<std::size_t>(m.groups.group_count), 0.0);
    const int active = keep_all ? 0 : (active_groups < 0 ? m.trained_interpreters : active_groups);

    Model probe = m;  // threshold override without touching the caller's model
    if (threshold > 0.0) probe.groups.threshold = threshold;

    Rng unused(0);
    int correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        Graph g;
        Binder b(g);
        std::vector<GroupDirective> dirs(static_cast<std::size_t>(m.groups.group_count));
        for (int j = 0; j < active; ++j) dirs[static_cast<std::size_t>(j)] = GroupDirective::greedy();
        Rollout roll = run_model(b, probe, data.images[i], dirs, unused);
        correct += roll.predicted == data.labels[i] ? 1 : 0;
        out.predictions.push_back(roll.predicted);
        out.keep_traces.push_back(roll.keep_trace);
        for (int j = 0; j < m.groups.group_count; ++j)
            out.mean_keep_per_group[static_cast<std::size_t>(j)] +=
                static_cast<double>(roll.groups[static_cast<std::size_t>(j)].live_in_blocks) /
                m.vit.n_patches();
    }
    const double inv = data.size() ? 1.0 / static_cast<double>(data.size()) : 0.0;
    out.accuracy = static_cast<double>(correct) * inv;
    for (double& v : out.mean_keep_per_group) v *= inv;
    return out;
}

}  // namespace tokendrop
