#include "tokendrop/synthetic.hpp"

#include <algorithm>
#include <stdexcept>

namespace tokendrop {

void SyntheticSpec::validate() const {
    if (region_size <= 0 || region_size > image_size) {
        throw std::invalid_argument("synthetic: region " + std::to_string(region_size) +
                                    " does not fit a " + std::to_string(image_size) + "px image");
    }
    if (class_count < 1 || class_count > 4) {
        throw std::invalid_argument("synthetic: class count must be 1..4");
    }
    if (channels < 1) throw std::invalid_argument("synthetic: channels must be positive");
    if (texture_period < 2) throw std::invalid_argument("synthetic: texture period must be >= 2");
    if (train_count <= 0 || test_count <= 0) {
        throw std::invalid_argument("synthetic: sample counts must be positive");
    }
}

namespace {

double texture_level(int cls, int y, int x, int period, double lo, double hi) {
    const int half = period / 2;
    bool high = false;
    switch (cls) {
        case 0: high = (y % period) < half; break;           // horizontal stripes
        case 1: high = (x % period) < half; break;           // vertical stripes
        case 2: high = ((y % period) < half) != ((x % period) < half); break;  // checker
        default: high = ((x + y) % period) < half; break;    // diagonal stripes
    }
    return high ? hi : lo;
}

void gen_split(const SyntheticSpec& spec, int count, Rng& rng, Dataset& out) {
    const int s = spec.image_size;
    for (int n = 0; n < count; ++n) {
        const int cls = rng.uniform_int(spec.class_count);
        const int max_off = s - spec.region_size;
        const int ry = max_off == 0 ? 0 : rng.uniform_int(max_off + 1);
        const int rx = max_off == 0 ? 0 : rng.uniform_int(max_off + 1);

        Image img;
        img.h = s;
        img.w = s;
        img.c = spec.channels;
        img.pix.resize(static_cast<std::size_t>(s) * static_cast<std::size_t>(s) *
                       static_cast<std::size_t>(spec.channels));
        Mask mask;
        mask.h = s;
        mask.w = s;
        mask.fg.assign(static_cast<std::size_t>(s) * static_cast<std::size_t>(s), 0);

        for (int y = 0; y < s; ++y) {
            for (int x = 0; x < s; ++x) {
                const bool inside = y >= ry && y < ry + spec.region_size && x >= rx &&
                                    x < rx + spec.region_size;
                if (inside) mask.fg[static_cast<std::size_t>(y * s + x)] = 1;
                for (int ch = 0; ch < spec.channels; ++ch) {
                    double v;
                    if (inside) {
                        // texture phase anchored at the region corner so placement
                        // does not leak the label
                        v = texture_level(cls, y - ry, x - rx, spec.texture_period, spec.texture_lo,
                                          spec.texture_hi);
                        v += (rng.uniform() * 2.0 - 1.0) * spec.texture_jitter;
                    } else {
                        v = rng.uniform();
                    }
                    img.at(y, x, ch) = std::clamp(v, 0.0, 1.0);
                }
            }
        }
        out.images.push_back(std::move(img));
        out.labels.push_back(cls);
        out.masks.push_back(std::move(mask));
    }
}

}  // namespace

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticData data;
    Rng rng(spec.seed);
    gen_split(spec, spec.train_count, rng, data.train);
    gen_split(spec, spec.test_count, rng, data.test);
    return data;
}

}  // namespace tokendrop
