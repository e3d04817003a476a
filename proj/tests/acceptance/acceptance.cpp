// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// fail. The end-to-end criteria share one trained model (criterion 5's run).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tokendrop/baselines.hpp"
#include "tokendrop/checkpoint.hpp"
#include "tokendrop/explain.hpp"
#include "tokendrop/flops.hpp"
#include "tokendrop/synthetic.hpp"

using namespace tokendrop;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* pattern, ...) {
    char buf[512];
    va_list args;
    va_start(args, pattern);
    std::vsnprintf(buf, sizeof(buf), pattern, args);
    va_end(args);
    return buf;
}

// --- criterion 1: gradient correctness ---------------------------------------

void criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string worst_name = "none";
    const auto record = [&](const std::string& name, const GradCheckReport& rep) {
        if (rep.max_rel_err > worst) {
            worst = rep.max_rel_err;
            worst_name = name;
        }
    };

    Rng rng(101);
    const auto rand_vec = [&](std::size_t n, double scale) {
        std::vector<double> v(n);
        for (auto& x : v) x = scale * (rng.uniform() * 2.0 - 1.0);
        return v;
    };
    const auto stack_rows = [](Tensor flat, int r, int c) {
        Tensor out = slice_cols(flat, 0, c);
        for (int i = 1; i < r; ++i) out = concat_rows(out, slice_cols(flat, i * c, (i + 1) * c));
        return out;
    };

    // per-operation checks through scalar projections; every random weight
    // is drawn once so f stays deterministic across evaluations
    {
        const auto w = rand_vec(6, 1.0);
        record("matmul+transpose", grad_check(
            [&](Graph& g, Tensor t) {
                Tensor a = stack_rows(slice_cols(t, 0, 12), 3, 4);
                Tensor b = stack_rows(slice_cols(t, 12, 20), 4, 2);
                return sum_all(mul(matmul(a, b), g.leaf({3, 2}, w)));
            },
            rand_vec(20, 1.0), 1e-5));
    }
    {
        const auto w = rand_vec(10, 1.0);
        record("softmax_rows", grad_check(
            [&](Graph& g, Tensor t) {
                Tensor x = stack_rows(t, 2, 5);
                return sum_all(mul(softmax_rows(x), g.leaf({2, 5}, w)));
            },
            rand_vec(10, 2.0), 1e-5));
        record("softmax_rows_masked", grad_check(
            [&](Graph& g, Tensor t) {
                Tensor x = stack_rows(t, 2, 5);
                return sum_all(mul(softmax_rows_masked(x, {1, 0, 1, 1, 0}), g.leaf({2, 5}, w)));
            },
            rand_vec(10, 2.0), 1e-5));
    }
    {
        const auto w = rand_vec(12, 1.0);
        record("layer_norm", grad_check(
            [&](Graph& g, Tensor t) {
                Tensor x = stack_rows(slice_cols(t, 0, 12), 2, 6);
                return sum_all(mul(layer_norm(x, slice_cols(t, 12, 18), slice_cols(t, 18, 24), 1e-5),
                                   g.leaf({2, 6}, w)));
            },
            rand_vec(24, 1.0), 1e-5));
    }
    record("gelu", grad_check([](Graph&, Tensor t) { return sum_all(gelu(t)); }, rand_vec(8, 2.0), 1e-5));
    record("sigmoid+log", grad_check(
        [](Graph&, Tensor t) { return sum_all(vlog(affine(sigmoid(t), 0.98, 0.01))); },
        rand_vec(8, 2.0), 1e-5));
    {
        const auto w = rand_vec(8, 1.0);
        record("add/mul/affine/rowvec", grad_check(
            [&](Graph& g, Tensor t) {
                Tensor a = stack_rows(slice_cols(t, 0, 8), 2, 4);
                Tensor v = slice_cols(t, 8, 12);
                Tensor m = mul(add_rowvec(a, v), affine(a, -0.5, 0.75));
                return sum_all(mul(m, g.leaf({2, 4}, w)));
            },
            rand_vec(12, 1.0), 1e-5));
    }
    record("cross_entropy+take_row", grad_check(
        [&](Graph&, Tensor t) { return cross_entropy(take_row(stack_rows(t, 2, 4), 1), 2); },
        rand_vec(8, 2.0), 1e-5));
    {
        const auto w = rand_vec(16, 1.0);
        record("masked_row_update+concat", grad_check(
            [&](Graph& g, Tensor t) {
                Tensor x = stack_rows(slice_cols(t, 0, 8), 2, 4);
                Tensor u = stack_rows(slice_cols(t, 8, 16), 2, 4);
                Tensor merged = concat_cols({x, masked_row_update(x, u, {1, 0})});
                return sum_all(mul(merged, g.leaf({2, 8}, w)));
            },
            rand_vec(16, 1.0), 1e-5));
    }

    // full tiny backbone cross-entropy loss through every parameter
    {
        Model m = oracles::tiny_model(2, 1, 8, 2, 16, 8, 2, 31);
        Image img;
        img.h = 16;
        img.w = 16;
        img.c = 1;
        img.pix = rand_vec(256, 0.5);
        for (auto& v : img.pix) v = 0.5 + v;
        std::vector<Param*> params = m.vit.all_params();
        std::vector<double> theta;
        for (Param* p : params) theta.insert(theta.end(), p->value.begin(), p->value.end());
        record("tiny_vit_loss", grad_check(
            [&](Graph& g, Tensor t) {
                Binder b(g);
                std::size_t off = 0;
                for (Param* p : params) {
                    Tensor flat = slice_cols(t, static_cast<int>(off), static_cast<int>(off + p->numel()));
                    off += p->numel();
                    Tensor shaped = p->shape.size() == 2
                                        ? stack_rows(flat, p->shape[0], p->shape[1])
                                        : flat;
                    b.bind_override(*p, shaped);
                }
                return cross_entropy(vit_forward(b, img, m.vit), 1);
            },
            theta, 1e-5));
    }

    const double elapsed = seconds_since(t0);
    report(1, worst < 1e-4 && elapsed < 120.0,
           fmt("gradient checks, worst rel err %.3g (%s), %.1f s", worst, worst_name.c_str(), elapsed));
}

// --- criterion 2: policy-gradient unbiasedness --------------------------------

void criterion_estimator() {
    const auto t0 = std::chrono::steady_clock::now();
    // six-token toy model: 16x24 image, 8px patches, one group of two blocks
    VitParams shape;
    shape.image_h = 16;
    shape.image_w = 24;
    shape.channels = 1;
    shape.patch_size = 8;
    shape.d_emb = 8;
    shape.heads = 2;
    shape.num_classes = 2;
    GroupConfig gc;
    gc.group_count = 1;
    gc.blocks_per_group = 2;
    Model m;
    Rng init(2027);
    m.build(shape, gc, 0, true, init);

    Image img;
    img.h = 16;
    img.w = 24;
    img.c = 1;
    img.pix.resize(16 * 24);
    Rng pix(5);
    for (auto& v : img.pix) v = pix.uniform();
    const int label = evaluate_model(m, Dataset{{img}, {0}, {}}, 0, 0.0, true).predictions[0];

    const RewardConfig cfg;  // tau 1.5, squared
    const auto exact = oracles::exact_policy_gradient(m, img, label, cfg);
    const auto mc = oracles::mc_policy_gradient(m, img, label, cfg, 100000, 424242);

    double max_coord = 0.0;
    for (const auto& [name, g] : exact)
        for (double v : g) max_coord = std::max(max_coord, std::fabs(v));

    // per-coordinate relative error; coordinates near zero compare against
    // 1% of the dominant coordinate so the target is meetable by any
    // finite-sample estimator
    double worst = 0.0;
    for (const auto& [name, g] : exact) {
        const auto& est = mc.at(name);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double denom = std::max(std::fabs(g[i]), 1e-2 * max_coord);
            worst = std::max(worst, std::fabs(est[i] - g[i]) / denom);
        }
    }
    const double elapsed = seconds_since(t0);
    report(2, max_coord > 0.0 && worst < 0.02 && elapsed < 300.0,
           fmt("100k-episode estimator vs 64-config enumeration, worst rel err %.4f, %.0f s",
               worst, elapsed));
}

// --- criterion 3: cost model vs the published full-model figure ---------------

void criterion_flops() {
    const CostConfig deit_b = CostConfig::plain(12, 768, 196);
    const std::vector<int> dense(12, 196);
    const CostReport rep = model_flops(deit_b, dense);
    const double ratio = rep.mean_total / 16.8e9;

    bool subterms = msa_flops(197, 768) == 4LL * 197 * 768 * 768 + 2LL * 197 * 197 * 768 &&
                    ffn_flops(197, 768) == 8LL * 197 * 768 * 768;
    // recount oracle across shapes and a pruned trace
    CostConfig toy;
    toy.blocks = 6;
    toy.d_emb = 64;
    toy.n_patches = 16;
    toy.group_count = 3;
    toy.blocks_per_group = 2;
    const std::vector<int> trace{16, 16, 9, 9, 4, 4};
    const bool recount =
        static_cast<long long>(model_flops(toy, trace).mean_total) == oracles::recount_flops(toy, trace) &&
        static_cast<long long>(rep.mean_total) == oracles::recount_flops(deit_b, dense);

    report(3, ratio > 0.95 && ratio < 1.05 && subterms && recount,
           fmt("dense 12x768x197 total %.3f G = %.1f%% of 16.8 G, recount %s", rep.mean_total / 1e9,
               100.0 * ratio, recount ? "exact" : "MISMATCH"));
}

// --- criterion 4: reward grid --------------------------------------------------

void criterion_reward() {
    bool ok = true;
    for (int n = 1; n <= 16 && ok; ++n) {
        for (int k = 0; k <= n && ok; ++k) {
            for (double tau : {0.5, 1.0, 1.5}) {
                for (bool squared : {true, false}) {
                    const RewardConfig cfg{tau, squared};
                    const double frac = static_cast<double>(k) / n;
                    const double expect = squared ? 1.0 - frac * frac : 1.0 - frac;
                    if (reward(k, n, true, cfg) != expect) ok = false;
                    if (reward(k, n, false, cfg) != -tau) ok = false;
                }
            }
        }
    }
    report(4, ok, "exact agreement over N in 1..16, every keep count, tau in {0.5,1.0,1.5}, both forms");
}

// --- criteria 5-7, 10: one end-to-end run --------------------------------------

struct EndToEnd {
    Model model;
    SyntheticData data;
    double backbone_accuracy = 0.0;
    double final_accuracy = 0.0;
    double mean_keep = 0.0;
    bool trained = false;
};

EndToEnd run_curriculum() {
    EndToEnd out;
    const auto t0 = std::chrono::steady_clock::now();

    SyntheticSpec spec;  // default desk-scale task
    out.data = gen_synthetic(spec);

    VitParams shape;
    shape.image_h = 32;
    shape.image_w = 32;
    shape.channels = 1;
    shape.patch_size = 8;
    shape.d_emb = 64;
    shape.heads = 4;
    shape.num_classes = 2;
    GroupConfig gc;
    gc.group_count = 3;
    gc.blocks_per_group = 2;
    Rng init(2030);
    out.model.build(shape, gc, 0, true, init);

    TrainConfig tc;  // proportionally shrunk schedule, 1:2 policy-to-blocks ratio
    tc.backbone_epochs = 30;
    tc.interpreter_epochs = 3;
    tc.block_epochs = 6;
    tc.reward.tau = 1.5;

    Trainer trainer(out.model, out.data.train, tc, 99);
    bool backbone_measured = false;
    while (!trainer.finished()) {
        trainer.run_epoch([](const std::string&) {});
        if (!backbone_measured && trainer.cursor().phase != TrainPhase::Backbone) {
            out.backbone_accuracy = evaluate_model(out.model, out.data.test, 0, 0.0, true).accuracy;
            backbone_measured = true;
        }
    }

    const EvalSummary final_eval = evaluate_model(out.model, out.data.test);
    out.final_accuracy = final_eval.accuracy;
    for (double k : final_eval.mean_keep_per_group) out.mean_keep += k;
    out.mean_keep /= static_cast<double>(final_eval.mean_keep_per_group.size());
    out.trained = true;

    const double elapsed = seconds_since(t0);
    report(5,
           out.backbone_accuracy >= 0.95 && out.mean_keep <= 0.7 &&
               out.final_accuracy >= out.backbone_accuracy - 0.02 && elapsed < 1800.0,
           fmt("curriculum: backbone %.4f, final %.4f, mean keep %.4f, %.0f s",
               out.backbone_accuracy, out.final_accuracy, out.mean_keep, elapsed));
    return out;
}

void criterion_localization(const EndToEnd& e2e) {
    const Model& m = e2e.model;
    const Dataset& test = e2e.data.test;
    const int n = m.vit.n_patches();
    const int gr = m.vit.image_h / m.vit.patch_size;
    const int gcols = m.vit.image_w / m.vit.patch_size;

    // learned: scores of the second group, zeros where already dropped
    std::vector<std::vector<KeepDecision>> histories;
    Rng unused(0);
    for (std::size_t i = 0; i < test.size(); ++i) {
        Graph g;
        Binder b(g);
        std::vector<GroupDirective> dirs(static_cast<std::size_t>(m.groups.group_count));
        for (int j = 0; j < m.trained_interpreters; ++j)
            dirs[static_cast<std::size_t>(j)] = GroupDirective::greedy();
        Rollout roll = run_model(b, m, test.images[i], dirs, unused);
        std::vector<KeepDecision> h;
        for (int j = 0; j < m.trained_interpreters; ++j)
            h.push_back(roll.groups[static_cast<std::size_t>(j)].decision);
        histories.push_back(std::move(h));
    }
    const int heat_group = std::min(1, m.trained_interpreters - 1);

    const auto mean_miou = [&](const std::function<std::vector<double>(std::size_t)>& scores_of) {
        double acc = 0.0;
        for (std::size_t i = 0; i < test.size(); ++i) {
            const Image hm = upsample(scores_of(i), gr, gcols, 32, 32);
            acc += segmentation_metrics(hm, test.masks[i], mean_value(hm)).mean_iou;
        }
        return acc / static_cast<double>(test.size());
    };

    const double learned = mean_miou([&](std::size_t i) { return assemble_scores(histories[i], heat_group, n); });
    const double random = mean_miou([&](std::size_t i) {
        Rng rng(7919 * (i + 1));
        std::vector<double> s(static_cast<std::size_t>(n));
        for (auto& v : s) v = rng.uniform();
        return s;
    });
    const double attention = mean_miou([&](std::size_t i) { return cls_attention_scores(m, test.images[i], 1); });

    report(6, learned >= random + 0.15 && learned > attention,
           fmt("mIoU learned %.4f vs random %.4f (gap %.4f, need 0.15) and attention %.4f",
               learned, random, learned - random, attention));
}

void criterion_threshold_sweep(const EndToEnd& e2e) {
    const CostConfig cc{e2e.model.block_count(), e2e.model.vit.d_emb, e2e.model.vit.n_patches(),
                        e2e.model.groups.group_count, e2e.model.groups.blocks_per_group,
                        e2e.model.interpreters[0].heads};
    double prev = std::numeric_limits<double>::infinity();
    bool monotone = true;
    double at_half = 0.0;
    double dense = 0.0;
    std::string row;
    for (double t : {0.48, 0.49, 0.50, 0.51, 0.52}) {
        const EvalSummary ev = evaluate_model(e2e.model, e2e.data.test, -1, t, false);
        const CostReport cost = accumulate_costs(cc, ev.keep_traces);
        monotone &= cost.mean_total <= prev + 1e-9;
        prev = cost.mean_total;
        dense = static_cast<double>(cost.baseline_total);
        if (t == 0.50) at_half = cost.mean_total;
        row += fmt("%.2f:%.2fM ", t, cost.mean_total / 1e6);
    }
    report(7, monotone && at_half < dense,
           fmt("mean cost by threshold %s(dense %.2fM)", row.c_str(), dense / 1e6));
}

void criterion_mask_gather() {
    Model m = oracles::tiny_model(4, 2, 16, 2, 32, 8, 2, 77);
    Rng rng(4242);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Image img;
        img.h = 32;
        img.w = 32;
        img.c = 1;
        img.pix.resize(1024);
        for (auto& v : img.pix) v = rng.uniform();
        KeepMasks masks;
        masks.blocks_per_group = 2;
        masks.per_group.resize(2);
        for (auto& grp : masks.per_group) {
            grp.resize(16);
            for (auto& v : grp) v = rng.bernoulli(0.65) ? 1 : 0;
        }
        bool any = false;
        for (auto v : masks.per_group[0]) any |= v != 0;
        if (!any) masks.per_group[0][0] = 1;

        Graph g;
        Binder b(g);
        const std::vector<double> masked = vit_forward(b, img, m.vit, &masks).data();
        const std::vector<double> gathered = oracles::gathered_vit_logits(m, img, masks);
        for (std::size_t i = 0; i < masked.size(); ++i)
            worst = std::max(worst, std::fabs(masked[i] - gathered[i]));
    }
    report(8, worst < 1e-10, fmt("100 random masks, max |logit difference| %.3g", worst));
}

void criterion_segmentation_fixtures() {
    Mask half;
    half.h = 4;
    half.w = 4;
    half.fg = {1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0};
    Image pred;
    pred.h = 4;
    pred.w = 4;
    pred.c = 1;
    pred.pix.assign(16, 0.0);
    for (int i = 0; i < 8; ++i) pred.pix[static_cast<std::size_t>(i)] = 1.0;

    const SegmentationResult perfect = segmentation_metrics(pred, half, 0.5);
    Image none = pred;
    none.pix.assign(16, 0.0);
    const SegmentationResult allbg = segmentation_metrics(none, half, 0.5);
    Image inverted = pred;
    for (auto& v : inverted.pix) v = 1.0 - v;
    const SegmentationResult inv = segmentation_metrics(inverted, half, 0.5);

    const bool ok = perfect.pixel_accuracy == 1.0 && perfect.mean_accuracy == 1.0 &&
                    perfect.mean_iou == 1.0 && allbg.pixel_accuracy == 0.5 &&
                    allbg.mean_accuracy == 0.5 && allbg.mean_iou == 0.25 &&
                    inv.pixel_accuracy == 0.0 && inv.mean_iou == 0.0;
    report(9, ok, "perfect (1,1,1); all-background (0.5,0.5,0.25); inverted (0,-,0) reproduced exactly");
}

void criterion_combined_sweep(const EndToEnd& e2e) {
    const CurveSet curves = combined_sweep(e2e.model, e2e.data.test, {0.0, 0.50, 0.51, 0.52},
                                           {0.0, 0.1, 0.2, 0.3, 0.4, 0.5});

    // piecewise-linear read of a single-method curve at a cost fraction
    const auto interp = [](const std::vector<CurvePoint>& curve, double f) {
        // curves store decreasing fractions
        if (f >= curve.front().flops_fraction) return curve.front().accuracy;
        for (std::size_t i = 1; i < curve.size(); ++i) {
            if (f >= curve[i].flops_fraction) {
                const double f0 = curve[i].flops_fraction, f1 = curve[i - 1].flops_fraction;
                const double w = f1 == f0 ? 0.0 : (f - f0) / (f1 - f0);
                return curve[i].accuracy * (1.0 - w) + curve[i - 1].accuracy * w;
            }
        }
        return curve.back().accuracy;
    };

    bool frontier = true;
    double worst_gap = 0.0;
    for (const CurvePoint& p : curves.combined) {
        const double floor_acc =
            std::min(interp(curves.prune_only, p.flops_fraction), interp(curves.tokens_only, p.flops_fraction));
        worst_gap = std::min(worst_gap, p.accuracy - floor_acc);
        if (p.accuracy < floor_acc - 1e-9) frontier = false;
    }
    const bool anchored = curves.combined.front().flops_fraction == 1.0 &&
                          curves.prune_only.front().flops_fraction == 1.0 &&
                          curves.tokens_only.front().flops_fraction == 1.0;
    report(10, frontier && anchored,
           fmt("combined frontier never below both single curves (worst margin %+.4f), all anchored at 1.0",
               worst_gap));
}

void criterion_determinism() {
    SyntheticSpec spec;
    spec.image_size = 16;
    spec.region_size = 8;
    spec.train_count = 24;
    spec.test_count = 8;
    spec.seed = 5;
    const SyntheticData data = gen_synthetic(spec);

    TrainConfig tc;
    tc.backbone_epochs = 2;
    tc.interpreter_epochs = 1;
    tc.block_epochs = 1;
    tc.batch_size = 8;

    const auto run_logged = [&](Model& m, std::vector<std::string>& log) {
        Trainer t(m, data.train, tc, 31);
        t.run_to_completion([&](const std::string& s) { log.push_back(s); });
    };

    Model a = oracles::tiny_model(4, 2, 16, 2, 16, 8, 2, 55);
    Model b = oracles::tiny_model(4, 2, 16, 2, 16, 8, 2, 55);
    std::vector<std::string> log_a, log_b;
    run_logged(a, log_a);
    run_logged(b, log_b);
    const bool identical_logs = log_a == log_b && !log_a.empty();

    // interrupted at epoch 3, saved, reloaded, resumed
    Model c = oracles::tiny_model(4, 2, 16, 2, 16, 8, 2, 55);
    Trainer tc1(c, data.train, tc, 31);
    std::vector<std::string> log_c;
    for (int e = 0; e < 3; ++e) tc1.run_epoch([&](const std::string& s) { log_c.push_back(s); });
    const std::string path = "acceptance_resume.ckpt";
    save_checkpoint(c, tc1.snapshot(), path);
    LoadedCheckpoint loaded = load_checkpoint(path);
    Trainer tc2(loaded.model, data.train, tc, 0);
    tc2.restore(loaded.state);
    tc2.run_to_completion([&](const std::string& s) { log_c.push_back(s); });
    std::remove(path.c_str());

    bool identical_params = true;
    {
        auto pa = a.all_params();
        auto pc = loaded.model.all_params();
        for (std::size_t i = 0; i < pa.size(); ++i)
            identical_params &= pa[i]->value == pc[i]->value;
    }
    report(11, identical_logs && log_c == log_a && identical_params,
           fmt("twin runs identical (%zu log lines); resumed run bit-identical to uninterrupted",
               log_a.size()));
}

}  // namespace

int main() {
    std::printf("acceptance suite\n");
    criterion_gradients();
    criterion_estimator();
    criterion_flops();
    criterion_reward();
    const EndToEnd e2e = run_curriculum();
    if (e2e.trained) {
        criterion_localization(e2e);
        criterion_threshold_sweep(e2e);
    }
    criterion_mask_gather();
    criterion_segmentation_fixtures();
    if (e2e.trained) criterion_combined_sweep(e2e);
    criterion_determinism();
    std::printf("%d criterion(s) failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
