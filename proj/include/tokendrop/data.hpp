#pragma once

#include <cstdint>
#include <vector>

#include "tokendrop/vit.hpp"

namespace tokendrop {

// Binary foreground mask, row-major, 1 = foreground.
struct Mask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> fg;

    std::uint8_t at(int y, int x) const { return fg[static_cast<std::size_t>(y * w + x)]; }
    int area() const {
        int n = 0;
        for (auto v : fg) n += v ? 1 : 0;
        return n;
    }
};

struct Dataset {
    std::vector<Image> images;
    std::vector<int> labels;
    std::vector<Mask> masks;  // ground-truth informative regions (may be empty)

    std::size_t size() const { return images.size(); }
};

}  // namespace tokendrop
