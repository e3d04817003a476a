#pragma once

#include <cstdint>

#include "tokendrop/data.hpp"

namespace tokendrop {

// Synthetic localization task: i.i.d. uniform noise everywhere except one
// square region carrying a class-specific stripe texture. The label is
// decidable only from the region; the exact region rectangle is the
// ground-truth mask.
//
// Textures by class: 0 horizontal stripes, 1 vertical stripes, 2
// checkerboard, 3 diagonal stripes (period `texture_period`, levels
// texture_lo/texture_hi plus uniform jitter of +-texture_jitter).
struct SyntheticSpec {
    int image_size = 32;
    int channels = 1;
    int class_count = 2;       // up to 4
    int region_size = 12;
    int texture_period = 4;
    double texture_lo = 0.1;
    double texture_hi = 0.9;
    double texture_jitter = 0.05;
    int train_count = 256;
    int test_count = 128;
    std::uint64_t seed = 1;

    void validate() const;
};

struct SyntheticData {
    Dataset train, test;
};

SyntheticData gen_synthetic(const SyntheticSpec& spec);

}  // namespace tokendrop
