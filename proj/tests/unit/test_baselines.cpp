#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "tokendrop/baselines.hpp"

using namespace tokendrop;

TEST_CASE("random_drop keeps exact counts and is seed-deterministic") {
    const auto all = random_drop(10, 0.0, 1);
    CHECK(all == std::vector<std::uint8_t>(10, 1));

    const auto mask = random_drop(100, 0.3, 7);
    int kept = 0;
    for (auto v : mask) kept += v;
    CHECK(kept == 70);

    CHECK(random_drop(100, 0.3, 7) == mask);
    CHECK(random_drop(100, 0.3, 8) != mask);
    CHECK_THROWS_AS(random_drop(10, 1.0, 1), std::invalid_argument);
}

TEST_CASE("random_drop covers tokens uniformly over seeds") {
    std::vector<int> dropped(20, 0);
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
        const auto mask = random_drop(20, 0.25, seed);
        for (int i = 0; i < 20; ++i)
            if (!mask[static_cast<std::size_t>(i)]) ++dropped[static_cast<std::size_t>(i)];
    }
    for (int count : dropped) {
        CHECK(count > 300);  // expectation 500 per slot
        CHECK(count < 700);
    }
}

TEST_CASE("keep_top_scores drops the weakest with index ties") {
    // uniform scores: the lowest indices drop first
    const auto mask = keep_top_scores(std::vector<double>(5, 0.5), 0.4);
    CHECK(mask == std::vector<std::uint8_t>{0, 0, 1, 1, 1});

    const auto ranked = keep_top_scores({0.9, 0.1, 0.5, 0.3}, 0.5);
    CHECK(ranked == std::vector<std::uint8_t>{1, 0, 1, 0});
}

TEST_CASE("attention drop keeps the top of an independently recomputed ranking") {
    Model m = oracles::tiny_model(4, 2, 16, 2, 32, 8);
    Image img;
    img.h = 32;
    img.w = 32;
    img.c = 1;
    img.pix.resize(1024);
    Rng rng(3);
    for (auto& v : img.pix) v = rng.uniform();

    const std::vector<double> scores = cls_attention_scores(m, img, 1);
    REQUIRE(scores.size() == 16);
    double total = 0.0;
    for (double v : scores) total += v;
    CHECK(total <= 1.0 + 1e-9);  // class row attention mass on patches

    const auto mask = attention_drop(m, img, 0.3, 1);
    int kept = 0;
    for (auto v : mask) kept += v;
    CHECK(kept == 16 - 4);
    // every kept token outranks (or ties with higher index than) every dropped one
    double worst_kept = 2.0, best_dropped = -1.0;
    for (int i = 0; i < 16; ++i) {
        if (mask[static_cast<std::size_t>(i)]) worst_kept = std::min(worst_kept, scores[static_cast<std::size_t>(i)]);
        else best_dropped = std::max(best_dropped, scores[static_cast<std::size_t>(i)]);
    }
    CHECK(worst_kept >= best_dropped);

    CHECK(attention_drop(m, img, 0.0, 1) == std::vector<std::uint8_t>(16, 1));
}

TEST_CASE("temporal difference scores: zero-previous rule and loop oracle") {
    // static clip: every non-first frame scores zero
    FrameTokens frame;
    frame.n_slots = 3;
    frame.width = 4;
    frame.values = {1, 2, 3, 4, -1, 0, 1, 0, 2, 2, 2, 2};
    const std::vector<FrameTokens> still{frame, frame, frame};
    const auto scores = temporal_difference_scores(still);
    REQUIRE(scores.size() == 9);
    // first frame: norms
    CHECK(scores[0] == doctest::Approx(std::sqrt(30.0)));
    CHECK(scores[1] == doctest::Approx(std::sqrt(2.0)));
    CHECK(scores[2] == doctest::Approx(4.0));
    for (std::size_t i = 3; i < 9; ++i) CHECK(scores[i] == 0.0);

    // survivors of a static clip concentrate in the first frame
    const auto mask = temporal_difference_drop(still, 0.5);
    int kept_first = 0, kept_rest = 0;
    for (int i = 0; i < 9; ++i) (i < 3 ? kept_first : kept_rest) += mask[static_cast<std::size_t>(i)];
    CHECK(kept_first == 3);

    // random clip vs a naive double loop
    Rng rng(11);
    std::vector<FrameTokens> clip(4);
    for (auto& f : clip) {
        f.n_slots = 5;
        f.width = 3;
        f.values.resize(15);
        for (auto& v : f.values) v = rng.uniform() * 2 - 1;
    }
    const auto fast = temporal_difference_scores(clip);
    for (int t = 0; t < 4; ++t)
        for (int s = 0; s < 5; ++s) {
            double acc = 0.0;
            for (int j = 0; j < 3; ++j) {
                const double cur = clip[static_cast<std::size_t>(t)].values[static_cast<std::size_t>(s * 3 + j)];
                const double prev = t == 0 ? 0.0 : clip[static_cast<std::size_t>(t - 1)].values[static_cast<std::size_t>(s * 3 + j)];
                acc += (cur - prev) * (cur - prev);
            }
            CHECK(std::fabs(fast[static_cast<std::size_t>(t * 5 + s)] - std::sqrt(acc)) < 1e-12);
        }

    std::vector<FrameTokens> bad = clip;
    bad[1].n_slots = 4;
    CHECK_THROWS_AS(temporal_difference_scores(bad), std::invalid_argument);
}

TEST_CASE("magnitude pruning zeroes the smallest weights per layer") {
    Model m = oracles::tiny_model(2, 1, 16, 2);
    // hand case on one layer
    Param& layer = m.vit.blocks[0].wq;
    layer.value.assign(layer.numel(), 0.0);
    layer.value[0] = 1.0;
    layer.value[1] = -3.0;
    layer.value[2] = 0.5;
    layer.value[3] = 2.0;
    for (std::size_t i = 4; i < layer.numel(); ++i) layer.value[i] = 10.0 + static_cast<double>(i);

    Model pruned = m;
    magnitude_prune(pruned, 2.0 / static_cast<double>(layer.numel()) + 1e-9);
    CHECK(pruned.vit.blocks[0].wq.value[0] == 0.0);   // |1.0| and |0.5| are smallest
    CHECK(pruned.vit.blocks[0].wq.value[2] == 0.0);
    CHECK(pruned.vit.blocks[0].wq.value[1] == -3.0);
    CHECK(pruned.vit.blocks[0].wq.value[3] == 2.0);
}

TEST_CASE("pruning keeps exact nonzero counts, spares biases, and is idempotent") {
    Model m = oracles::tiny_model(2, 1, 16, 2);
    const std::vector<double> biases_before = m.vit.blocks[0].b1.value;

    Model a = m;
    magnitude_prune(a, 0.3);
    for (Param* p : linear_weight_params(a)) {
        int nonzero = 0;
        for (double v : p->value) nonzero += v != 0.0 ? 1 : 0;
        const int expected = static_cast<int>(p->numel()) -
                             static_cast<int>(std::floor(0.3 * static_cast<double>(p->numel())));
        CHECK(nonzero == expected);
    }
    CHECK(a.vit.blocks[0].b1.value == biases_before);

    Model b = a;
    magnitude_prune(b, 0.3);
    for (std::size_t i = 0; i < linear_weight_params(a).size(); ++i) {
        CHECK(linear_weight_params(a)[i]->value == linear_weight_params(b)[i]->value);
    }

    Model c = m;
    magnitude_prune(c, 0.0);
    for (std::size_t i = 0; i < linear_weight_params(c).size(); ++i) {
        Model& mm = m;
        CHECK(linear_weight_params(c)[i]->value == linear_weight_params(mm)[i]->value);
    }
}

TEST_CASE("combined sweep anchors at dense accuracy and never increases cost") {
    Model m = oracles::tiny_model(2, 1, 16, 2, 16, 8, 2, 41);
    SyntheticSpec spec;
    spec.image_size = 16;
    spec.region_size = 8;
    spec.train_count = 4;
    spec.test_count = 24;
    spec.seed = 5;
    SyntheticData data = gen_synthetic(spec);
    m.trained_interpreters = 1;  // untrained scores ~0.5 still exercise the plumbing

    const CurveSet curves = combined_sweep(m, data.test, {0.0, 0.5, 0.52}, {0.0, 0.2, 0.4});
    const EvalSummary dense = evaluate_model(m, data.test, -1, 0.0, true);

    for (const auto* curve : {&curves.prune_only, &curves.tokens_only, &curves.combined}) {
        REQUIRE(!curve->empty());
        CHECK((*curve)[0].flops_fraction == doctest::Approx(1.0));
        CHECK((*curve)[0].accuracy == doctest::Approx(dense.accuracy));
        for (std::size_t i = 1; i < curve->size(); ++i) {
            CHECK((*curve)[i].flops_fraction <= (*curve)[i - 1].flops_fraction + 1e-12);
        }
    }
    CHECK(curves.combined.size() == 5);  // anchor + 2 threshold moves + 2 ratio moves

    const std::string csv = curves.csv();
    CHECK(csv.find("method,flops_fraction,accuracy") == 0);
    CHECK(csv.find("combined,") != std::string::npos);
}

TEST_CASE("learned input-level strategy matches the drop budget") {
    Model m = oracles::tiny_model(2, 1, 16, 2, 32, 8, 2, 43);
    m.trained_interpreters = 1;
    Image img;
    img.h = 32;
    img.w = 32;
    img.c = 1;
    img.pix.resize(1024);
    Rng rng(9);
    for (auto& v : img.pix) v = rng.uniform();
    const auto mask = learned_drop(m, img, 0.3);
    int kept = 0;
    for (auto v : mask) kept += v;
    CHECK(kept == 12);
}
