// Command-line driver: training, evaluation, sweeps, and visualization for
// the token-dropping vision transformer on the synthetic localization task.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "tokendrop/baselines.hpp"
#include "tokendrop/checkpoint.hpp"
#include "tokendrop/config.hpp"
#include "tokendrop/explain.hpp"
#include "tokendrop/flops.hpp"
#include "tokendrop/pixmap.hpp"
#include "tokendrop/synthetic.hpp"

namespace fs = std::filesystem;
using namespace tokendrop;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = "out";
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key = value configuration file");
    cmd->add_option("--set", args.overrides, "override one config key, key=value (repeatable)");
    cmd->add_option("--out", args.out_dir, "output directory");
}

Config load_config(const CommonArgs& args) {
    Config cfg = Config::defaults();
    if (!args.config_path.empty()) cfg.load_file(args.config_path);
    for (const std::string& kv : args.overrides) cfg.set_assignment(kv);
    std::cout << "# effective configuration\n" << cfg.dump() << "#\n";
    return cfg;
}

SyntheticSpec spec_from(const Config& cfg) {
    SyntheticSpec spec;
    spec.image_size = cfg.geti("image_size");
    spec.channels = cfg.geti("channels");
    spec.class_count = cfg.geti("class_count");
    spec.region_size = cfg.geti("region_size");
    spec.texture_period = cfg.geti("texture_period");
    spec.train_count = cfg.geti("train_count");
    spec.test_count = cfg.geti("test_count");
    spec.seed = cfg.getu64("seed");
    return spec;
}

TrainConfig train_config_from(const Config& cfg) {
    TrainConfig tc;
    tc.backbone_epochs = cfg.geti("backbone_epochs");
    tc.interpreter_epochs = cfg.geti("interpreter_epochs");
    tc.block_epochs = cfg.geti("block_epochs");
    tc.batch_size = cfg.geti("batch_size");
    tc.lr_backbone = cfg.getd("lr_backbone");
    tc.lr_interpreter = cfg.getd("lr_interpreter");
    tc.lr_blocks = cfg.getd("lr_blocks");
    tc.reward.tau = cfg.getd("tau");
    tc.reward.squared = cfg.getb("squared_reward");
    return tc;
}

Model fresh_model(const Config& cfg) {
    VitParams shape;
    shape.image_h = cfg.geti("image_size");
    shape.image_w = cfg.geti("image_size");
    shape.channels = cfg.geti("channels");
    shape.patch_size = cfg.geti("patch_size");
    shape.d_emb = cfg.geti("d_emb");
    shape.heads = cfg.geti("heads");
    shape.num_classes = cfg.geti("class_count");
    GroupConfig gc;
    gc.group_count = cfg.geti("group_count");
    gc.blocks_per_group = cfg.geti("blocks") / std::max(1, cfg.geti("group_count"));
    gc.threshold = cfg.getd("threshold");
    gc.validate(cfg.geti("blocks"));
    Model m;
    Rng init_rng(cfg.getu64("seed") ^ 0x9e3779b97f4a7c15ULL);
    m.build(shape, gc, cfg.geti("interp_heads"), cfg.getb("interp_bias"), init_rng);
    return m;
}

CostConfig cost_config_of(const Model& m) {
    CostConfig cc;
    cc.blocks = m.block_count();
    cc.d_emb = m.vit.d_emb;
    cc.n_patches = m.vit.n_patches();
    cc.group_count = m.groups.group_count;
    cc.blocks_per_group = m.groups.blocks_per_group;
    cc.interp_heads = m.interpreters.empty() ? 0 : m.interpreters[0].heads;
    return cc;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << content;
}

// --- tiny 3x5 digit glyphs for the reduction-strip annotation ---------------

constexpr std::uint16_t kGlyphs[12] = {
    0b111101101101111,  // 0
    0b010110010010111,  // 1
    0b111001111100111,  // 2
    0b111001111001111,  // 3
    0b101101111001001,  // 4
    0b111100111001111,  // 5
    0b111100111101111,  // 6
    0b111001001001001,  // 7
    0b111101111101111,  // 8
    0b111101111001111,  // 9
    0b000000000000010,  // .
    0b000000000000000,  // space
};

int glyph_index(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c == '.') return 10;
    return 11;
}

void stamp_text(Image& rgb, const std::string& text, int y0, int x0) {
    int x = x0;
    for (char c : text) {
        const std::uint16_t glyph = kGlyphs[glyph_index(c)];
        for (int gy = 0; gy < 5; ++gy) {
            for (int gx = 0; gx < 3; ++gx) {
                if (!(glyph >> (14 - (gy * 3 + gx)) & 1)) continue;
                const int py = y0 + gy, px = x + gx;
                if (py < 0 || py >= rgb.h || px < 0 || px >= rgb.w) continue;
                rgb.at(py, px, 0) = 1.0;
                rgb.at(py, px, 1) = 1.0;
                rgb.at(py, px, 2) = 0.0;
            }
        }
        x += 4;
    }
}

std::string ratio_text(double ratio) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", ratio);
    return buf;
}

// --- shared evaluation plumbing ----------------------------------------------

struct HeatmapBatch {
    std::vector<Image> heatmaps;
    SegmentationResult mean_default;  // project binarization (heatmap mean)
    SegmentationResult mean_fixed;    // fixed cutoff
};

SegmentationResult average(const std::vector<SegmentationResult>& rs) {
    SegmentationResult mean;
    for (const auto& r : rs) {
        mean.pixel_accuracy += r.pixel_accuracy;
        mean.mean_accuracy += r.mean_accuracy;
        mean.mean_iou += r.mean_iou;
        mean.fg_accuracy += r.fg_accuracy;
        mean.bg_accuracy += r.bg_accuracy;
        mean.fg_iou += r.fg_iou;
        mean.bg_iou += r.bg_iou;
    }
    const double inv = rs.empty() ? 0.0 : 1.0 / static_cast<double>(rs.size());
    mean.pixel_accuracy *= inv;
    mean.mean_accuracy *= inv;
    mean.mean_iou *= inv;
    mean.fg_accuracy *= inv;
    mean.bg_accuracy *= inv;
    mean.fg_iou *= inv;
    mean.bg_iou *= inv;
    return mean;
}

UpsampleMode upsample_mode_from(const Config& cfg) {
    const std::string& mode = cfg.gets("upsample_mode");
    if (mode == "bilinear") return UpsampleMode::Bilinear;
    if (mode == "nearest") return UpsampleMode::Nearest;
    throw std::invalid_argument("upsample_mode must be bilinear or nearest, got '" + mode + "'");
}

HeatmapBatch score_heatmaps(const Dataset& data, const Config& cfg, int grid_rows, int grid_cols,
                            const std::function<std::vector<double>(std::size_t)>& scores_of) {
    HeatmapBatch out;
    const UpsampleMode mode = upsample_mode_from(cfg);
    std::vector<SegmentationResult> by_mean, by_fixed;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Image& img = data.images[i];
        Image hm = upsample(scores_of(i), grid_rows, grid_cols, img.h, img.w, mode);
        if (!data.masks.empty()) {
            by_mean.push_back(segmentation_metrics(hm, data.masks[i], mean_value(hm)));
            by_fixed.push_back(
                segmentation_metrics(hm, data.masks[i], cfg.getd("binarize_threshold")));
        }
        out.heatmaps.push_back(std::move(hm));
    }
    out.mean_default = average(by_mean);
    out.mean_fixed = average(by_fixed);
    return out;
}

// Greedy decision history per sample for heatmap assembly.
std::vector<std::vector<KeepDecision>> greedy_histories(const Model& m, const Dataset& data) {
    std::vector<std::vector<KeepDecision>> out;
    Rng unused(0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        Graph g;
        Binder b(g);
        std::vector<GroupDirective> dirs(static_cast<std::size_t>(m.groups.group_count));
        for (int j = 0; j < m.trained_interpreters; ++j)
            dirs[static_cast<std::size_t>(j)] = GroupDirective::greedy();
        Rollout roll = run_model(b, m, data.images[i], dirs, unused);
        std::vector<KeepDecision> history;
        for (int j = 0; j < m.trained_interpreters; ++j)
            history.push_back(roll.groups[static_cast<std::size_t>(j)].decision);
        out.push_back(std::move(history));
    }
    return out;
}

double median_forward_ms(const Model& m, const Dataset& data) {
    // median of five timed passes after two discarded warmups
    Dataset probe;
    const std::size_t n = std::min<std::size_t>(8, data.size());
    probe.images.assign(data.images.begin(), data.images.begin() + static_cast<std::ptrdiff_t>(n));
    probe.labels.assign(data.labels.begin(), data.labels.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<double> times;
    for (int rep = 0; rep < 7; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        evaluate_model(m, probe);
        const auto t1 = std::chrono::steady_clock::now();
        if (rep >= 2) times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

std::string eval_report(const Model& m, const Dataset& test, const Config& cfg, CostReport* cost_out) {
    const EvalSummary ev = evaluate_model(m, test);
    const CostReport cost = accumulate_costs(cost_config_of(m), ev.keep_traces);
    if (cost_out) *cost_out = cost;

    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "accuracy=%.6f\n", ev.accuracy);
    out += buf;
    for (std::size_t jg = 0; jg < ev.mean_keep_per_group.size(); ++jg) {
        std::snprintf(buf, sizeof(buf), "keep_ratio_group%zu=%.6f\n", jg, ev.mean_keep_per_group[jg]);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "mean_flops=%.1f\nbaseline_flops=%lld\nspeedup=%.4f\n",
                  cost.mean_total, static_cast<long long>(cost.baseline_total), cost.speedup);
    out += buf;

    // cross-check: the report's keep ratios are the accountant's, recomputed
    for (std::size_t jg = 0; jg < ev.mean_keep_per_group.size(); ++jg) {
        if (std::fabs(ev.mean_keep_per_group[jg] - cost.keep_ratio_per_group[jg]) > 1e-9) {
            throw std::logic_error("evaluation and cost model disagree on keep ratios");
        }
    }
    return out;
}

// --- commands -----------------------------------------------------------------

int cmd_train(const CommonArgs& common, const std::string& resume_path) {
    const Config cfg = load_config(common);
    fs::create_directories(common.out_dir);
    const SyntheticData data = gen_synthetic(spec_from(cfg));
    const TrainConfig tc = train_config_from(cfg);

    Model model;
    TrainState restore_state;
    bool resuming = false;
    if (!resume_path.empty()) {
        LoadedCheckpoint loaded = load_checkpoint(resume_path);
        model = std::move(loaded.model);
        restore_state = loaded.state;
        resuming = true;
    } else {
        model = fresh_model(cfg);
    }

    Trainer trainer(model, data.train, tc, cfg.getu64("seed") + 1);
    if (resuming) trainer.restore(restore_state);

    const std::string log_path = (fs::path(common.out_dir) / "train.log").string();
    std::ofstream log(log_path, resuming ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open " + log_path);
    if (!resuming) log << "# schema: epoch phase group epoch_in_phase loss reward acc keep lr\n";

    const std::string ckpt_path = (fs::path(common.out_dir) / "model.ckpt").string();
    while (!trainer.finished()) {
        trainer.run_epoch([&](const std::string& line) {
            log << line << "\n";
            log.flush();
            std::cout << line << "\n";
        });
        save_checkpoint(model, trainer.snapshot(), ckpt_path);
    }

    std::cout << "# held-out evaluation\n" << eval_report(model, data.test, cfg, nullptr);
    std::cout << "checkpoint=" << ckpt_path << "\nlog=" << log_path << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& ckpt, bool keep_all) {
    const Config cfg = load_config(common);
    fs::create_directories(common.out_dir);
    const SyntheticData data = gen_synthetic(spec_from(cfg));
    Model model = load_checkpoint(ckpt).model;

    Model probe = model;
    if (keep_all) probe.trained_interpreters = 0;

    CostReport cost;
    const std::string report = eval_report(probe, data.test, cfg, &cost);
    std::cout << report;
    const std::string csv_path = (fs::path(common.out_dir) / "cost.csv").string();
    write_text(csv_path, cost.csv());
    std::cout << "cost_csv=" << csv_path << "\n";
    // wall-clock stays out of the deterministic artifacts
    std::cout << "# wall-clock (not part of the cost model): forward median "
              << median_forward_ms(probe, data.test) << " ms over 8 samples\n";
    return 0;
}

int cmd_visualize(const CommonArgs& common, const std::string& ckpt, int index,
                  const std::string& image_path) {
    const Config cfg = load_config(common);
    fs::create_directories(common.out_dir);
    Model model = load_checkpoint(ckpt).model;

    Image img;
    Mask gt;
    bool has_mask = false;
    if (!image_path.empty()) {
        img = read_pixmap(image_path);
        if (img.c != model.vit.channels) {
            throw std::runtime_error("image has " + std::to_string(img.c) + " channels, model expects " +
                                     std::to_string(model.vit.channels));
        }
    } else {
        const SyntheticData data = gen_synthetic(spec_from(cfg));
        if (index < 0 || index >= static_cast<int>(data.test.size())) {
            throw std::invalid_argument("sample index out of range");
        }
        img = data.test.images[static_cast<std::size_t>(index)];
        gt = data.test.masks[static_cast<std::size_t>(index)];
        has_mask = true;
    }

    Rng unused(0);
    Graph g;
    Binder b(g);
    std::vector<GroupDirective> dirs(static_cast<std::size_t>(model.groups.group_count));
    for (int j = 0; j < model.trained_interpreters; ++j)
        dirs[static_cast<std::size_t>(j)] = GroupDirective::greedy();
    Rollout roll = run_model(b, model, img, dirs, unused);
    std::vector<KeepDecision> history;
    for (int j = 0; j < model.trained_interpreters; ++j)
        history.push_back(roll.groups[static_cast<std::size_t>(j)].decision);

    const int gr = img.h / model.vit.patch_size;
    const int gc = img.w / model.vit.patch_size;
    const UpsampleMode mode = upsample_mode_from(cfg);

    std::string csv = "group,keep_ratio,heatmap,overlay";
    if (has_mask) csv += ",pixel_accuracy,mean_accuracy,mean_iou";
    csv += "\n";

    // per-group heatmaps
    for (int jg = 0; jg < model.trained_interpreters; ++jg) {
        const auto scores = assemble_scores(history, jg, model.vit.n_patches());
        const Image hm = upsample(scores, gr, gc, img.h, img.w, mode);
        const std::string raw = (fs::path(common.out_dir) / ("heatmap_group" + std::to_string(jg) + ".pgm")).string();
        const std::string overlay = (fs::path(common.out_dir) / ("overlay_group" + std::to_string(jg) + ".ppm")).string();
        render_heatmap(hm, img, raw, overlay);
        const double ratio = static_cast<double>(roll.groups[static_cast<std::size_t>(jg)].live_in_blocks) /
                             model.vit.n_patches();
        char buf[512];
        if (has_mask) {
            const std::string& bmode = cfg.gets("binarize_mode");
            if (bmode != "mean" && bmode != "fixed") {
                throw std::invalid_argument("binarize_mode must be mean or fixed, got '" + bmode + "'");
            }
            const double cut = bmode == "mean" ? mean_value(hm) : cfg.getd("binarize_threshold");
            const SegmentationResult r = segmentation_metrics(hm, gt, cut);
            std::snprintf(buf, sizeof(buf), "%d,%.6f,%s,%s,%.6f,%.6f,%.6f\n", jg, ratio, raw.c_str(),
                          overlay.c_str(), r.pixel_accuracy, r.mean_accuracy, r.mean_iou);
        } else {
            std::snprintf(buf, sizeof(buf), "%d,%.6f,%s,%s\n", jg, ratio, raw.c_str(), overlay.c_str());
        }
        csv += buf;
    }

    // hierarchical reduction strip: original, then per group the surviving
    // patches at full brightness with the kept ratio stamped top-left
    const int gap = 2;
    const int panels = 1 + model.trained_interpreters;
    Image strip;
    strip.h = img.h;
    strip.w = panels * img.w + (panels - 1) * gap;
    strip.c = 3;
    strip.pix.assign(static_cast<std::size_t>(strip.h) * static_cast<std::size_t>(strip.w) * 3, 1.0);
    const Image rgb = to_rgb(img);
    const auto blit = [&](const Image& panel, int x0) {
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                for (int ch = 0; ch < 3; ++ch) strip.at(y, x0 + x, ch) = panel.at(y, x, ch);
    };
    blit(rgb, 0);
    std::vector<std::uint8_t> alive(static_cast<std::size_t>(model.vit.n_patches()), 1);
    for (int jg = 0; jg < model.trained_interpreters; ++jg) {
        const auto mask = history[static_cast<std::size_t>(jg)].full_mask(model.vit.n_patches());
        for (int i = 0; i < model.vit.n_patches(); ++i) alive[static_cast<std::size_t>(i)] &= mask[static_cast<std::size_t>(i)];
        Image panel = rgb;
        for (int i = 0; i < model.vit.n_patches(); ++i) {
            if (alive[static_cast<std::size_t>(i)]) continue;
            const int py = (i / gc) * model.vit.patch_size;
            const int px = (i % gc) * model.vit.patch_size;
            for (int y = py; y < py + model.vit.patch_size; ++y)
                for (int x = px; x < px + model.vit.patch_size; ++x)
                    for (int ch = 0; ch < 3; ++ch) panel.at(y, x, ch) *= 0.2;
        }
        const double ratio = static_cast<double>(roll.groups[static_cast<std::size_t>(jg)].live_in_blocks) /
                             model.vit.n_patches();
        stamp_text(panel, ratio_text(ratio), 1, 1);
        blit(panel, (jg + 1) * (img.w + gap));
    }
    const std::string strip_path = (fs::path(common.out_dir) / "reduction_strip.ppm").string();
    write_ppm(strip, strip_path);

    const std::string csv_path = (fs::path(common.out_dir) / "visualize.csv").string();
    write_text(csv_path, csv);
    std::cout << csv << "strip=" << strip_path << "\nsummary_csv=" << csv_path << "\n";
    return 0;
}

int cmd_sweep_threshold(const CommonArgs& common, const std::string& ckpt) {
    const Config cfg = load_config(common);
    fs::create_directories(common.out_dir);
    const SyntheticData data = gen_synthetic(spec_from(cfg));
    Model model = load_checkpoint(ckpt).model;

    std::string csv = "threshold,mean_flops,accuracy,speedup\n";
    double prev = std::numeric_limits<double>::infinity();
    bool monotone = true;
    for (double t : cfg.get_list("sweep_thresholds")) {
        const EvalSummary ev = evaluate_model(model, data.test, -1, t, false);
        const CostReport cost = accumulate_costs(cost_config_of(model), ev.keep_traces);
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%.4f,%.1f,%.6f,%.4f\n", t, cost.mean_total, ev.accuracy,
                      cost.speedup);
        csv += buf;
        monotone &= cost.mean_total <= prev + 1e-9;
        prev = cost.mean_total;
    }
    const std::string path = (fs::path(common.out_dir) / "threshold_sweep.csv").string();
    write_text(path, csv);
    std::cout << csv << "monotone_non_increasing=" << (monotone ? "yes" : "no") << "\ncsv=" << path
              << "\n";
    return 0;
}

int cmd_sweep_tau(const CommonArgs& common, const std::string& ckpt) {
    const Config cfg = load_config(common);
    fs::create_directories(common.out_dir);
    const SyntheticData data = gen_synthetic(spec_from(cfg));
    const LoadedCheckpoint base = load_checkpoint(ckpt);

    TrainConfig tc = train_config_from(cfg);
    tc.backbone_epochs = 0;  // the checkpoint provides the trained backbone

    std::string csv = "tau,squared,accuracy,mean_keep,mean_flops\n";
    for (double tau : cfg.get_list("sweep_taus")) {
        Model model = base.model;
        model.trained_interpreters = 0;
        TrainConfig run = tc;
        run.reward.tau = tau;
        Trainer trainer(model, data.train, run, cfg.getu64("seed") + 1);
        trainer.run_to_completion([](const std::string&) {});
        const EvalSummary ev = evaluate_model(model, data.test);
        const CostReport cost = accumulate_costs(cost_config_of(model), ev.keep_traces);
        double keep = 0.0;
        for (double k : ev.mean_keep_per_group) keep += k;
        keep /= static_cast<double>(ev.mean_keep_per_group.size());
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%.2f,%s,%.6f,%.6f,%.1f\n", tau,
                      run.reward.squared ? "yes" : "no", ev.accuracy, keep, cost.mean_total);
        csv += buf;
        std::cout << buf;
    }
    const std::string path = (fs::path(common.out_dir) / "tau_sweep.csv").string();
    write_text(path, csv);
    std::cout << "csv=" << path << "\n";
    return 0;
}

int cmd_sweep_prune(const CommonArgs& common, const std::string& ckpt) {
    const Config cfg = load_config(common);
    fs::create_directories(common.out_dir);
    const SyntheticData data = gen_synthetic(spec_from(cfg));
    Model model = load_checkpoint(ckpt).model;

    const CurveSet curves = combined_sweep(model, data.test, cfg.get_list("combined_thresholds"),
                                           cfg.get_list("prune_ratios"));
    const std::string path = (fs::path(common.out_dir) / "prune_sweep.csv").string();
    write_text(path, curves.csv());
    std::cout << curves.csv() << "csv=" << path << "\n";
    return 0;
}

int cmd_baseline_compare(const CommonArgs& common, const std::string& ckpt) {
    const Config cfg = load_config(common);
    fs::create_directories(common.out_dir);
    const SyntheticData data = gen_synthetic(spec_from(cfg));
    Model model = load_checkpoint(ckpt).model;
    const double ratio = cfg.getd("drop_ratio");
    const int attention_block = cfg.geti("attention_block");
    const int n = model.vit.n_patches();
    const int gr = model.vit.image_h / model.vit.patch_size;
    const int gcols = model.vit.image_w / model.vit.patch_size;

    // per-strategy patch scores; the drop rule (lowest floor(ratio*n)) and
    // the backbone cost are shared, so the comparison is cost-matched
    const auto random_scores = [&](std::size_t i) {
        Rng rng(cfg.getu64("seed") * 7919 + i);
        std::vector<double> s(static_cast<std::size_t>(n));
        for (auto& v : s) v = rng.uniform();
        return s;
    };
    const auto attn_scores = [&](std::size_t i) {
        return cls_attention_scores(model, data.test.images[i], attention_block);
    };
    const auto learned_input_scores = [&](std::size_t i) {
        return learned_scores(model, data.test.images[i], 0);
    };
    if (model.trained_interpreters < 1) {
        throw std::runtime_error("baseline-compare needs a checkpoint with trained interpreters");
    }
    const int heat_group = std::min(cfg.geti("heat_group"), model.trained_interpreters - 1);
    const auto histories = greedy_histories(model, data.test);
    const auto learned_heat_scores = [&](std::size_t i) {
        return assemble_scores(histories[i], heat_group, n);
    };

    struct Strategy {
        const char* name;
        std::function<std::vector<double>(std::size_t)> drop_scores;
        std::function<std::vector<double>(std::size_t)> heat_scores;
    };
    const std::vector<Strategy> strategies{
        {"random", random_scores, random_scores},
        {"attention", attn_scores, attn_scores},
        {"learned", learned_input_scores, learned_heat_scores},
    };

    std::string csv =
        "strategy,accuracy,mean_flops,miou_mean_threshold,miou_fixed,pixel_acc,macc\n";
    for (const Strategy& strat : strategies) {
        // accuracy with the strategy's input-level mask, later groups keep all
        int correct = 0;
        std::vector<std::vector<int>> traces;
        Rng unused(0);
        for (std::size_t i = 0; i < data.test.size(); ++i) {
            const auto keep = keep_top_scores(strat.drop_scores(i), ratio);
            KeepDecision forced;
            forced.group = 0;
            for (int t = 0; t < n; ++t) {
                forced.token_index.push_back(t);
                forced.score.push_back(0.5);
                forced.keep.push_back(keep[static_cast<std::size_t>(t)]);
                forced.log_prob.push_back(0.0);
            }
            Graph g;
            Binder b(g);
            std::vector<GroupDirective> dirs(static_cast<std::size_t>(model.groups.group_count));
            dirs[0] = GroupDirective::forced(&forced);
            Rollout roll = run_model(b, model, data.test.images[i], dirs, unused);
            correct += roll.predicted == data.test.labels[i] ? 1 : 0;
            traces.push_back(roll.keep_trace);
        }
        // selection cost differs per strategy and is excluded: the column
        // reports the backbone cost of the surviving tokens only
        CostConfig cc = cost_config_of(model);
        cc.group_count = 0;
        cc.blocks_per_group = 0;
        const CostReport cost = accumulate_costs(cc, traces);
        const HeatmapBatch heat = score_heatmaps(data.test, cfg, gr, gcols, strat.heat_scores);
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.1f,%.6f,%.6f,%.6f,%.6f\n", strat.name,
                      static_cast<double>(correct) / static_cast<double>(data.test.size()),
                      cost.mean_total, heat.mean_default.mean_iou, heat.mean_fixed.mean_iou,
                      heat.mean_default.pixel_accuracy, heat.mean_default.mean_accuracy);
        csv += buf;
    }
    const std::string path = (fs::path(common.out_dir) / "baseline_compare.csv").string();
    write_text(path, csv);
    std::cout << csv << "csv=" << path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Token-dropping vision transformer: training, evaluation, and analysis"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string ckpt, resume_path, image_path;
    int sample_index = 0;
    bool keep_all = false;

    CLI::App* train = app.add_subcommand("train", "pre-train the backbone and run the curriculum");
    add_common(train, common);
    train->add_option("--resume", resume_path, "continue from a saved checkpoint");

    CLI::App* eval = app.add_subcommand("eval", "accuracy, keep ratios, and cost of a checkpoint");
    add_common(eval, common);
    eval->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    eval->add_flag("--keep-all", keep_all, "disable interpreters (dense backbone)");

    CLI::App* viz = app.add_subcommand("visualize", "heatmaps and the hierarchical reduction strip");
    add_common(viz, common);
    viz->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    viz->add_option("--index", sample_index, "held-out sample index");
    viz->add_option("--image", image_path, "external P5/P6 pixmap instead of a synthetic sample");

    CLI::App* sweep_t = app.add_subcommand("sweep-threshold", "cost/accuracy across keep thresholds");
    add_common(sweep_t, common);
    sweep_t->add_option("--checkpoint", ckpt, "model checkpoint")->required();

    CLI::App* sweep_tau = app.add_subcommand("sweep-tau", "retrain interpreters per penalty value");
    add_common(sweep_tau, common);
    sweep_tau->add_option("--checkpoint", ckpt, "backbone checkpoint to start from")->required();

    CLI::App* sweep_p = app.add_subcommand("sweep-prune", "pruning, token, and combined trade-off curves");
    add_common(sweep_p, common);
    sweep_p->add_option("--checkpoint", ckpt, "model checkpoint")->required();

    CLI::App* base = app.add_subcommand("baseline-compare", "cost-matched dropping strategies");
    add_common(base, common);
    base->add_option("--checkpoint", ckpt, "model checkpoint")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(common, resume_path);
        if (eval->parsed()) return cmd_eval(common, ckpt, keep_all);
        if (viz->parsed()) return cmd_visualize(common, ckpt, sample_index, image_path);
        if (sweep_t->parsed()) return cmd_sweep_threshold(common, ckpt);
        if (sweep_tau->parsed()) return cmd_sweep_tau(common, ckpt);
        if (sweep_p->parsed()) return cmd_sweep_prune(common, ckpt);
        if (base->parsed()) return cmd_baseline_compare(common, ckpt);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
