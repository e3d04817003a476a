#pragma once

#include <string>

#include "tokendrop/data.hpp"

namespace tokendrop {

// Binary portable pixmaps: P5 graymaps for single-channel images and masks,
// P6 for color. Values in [0,1] map to 0..255.
void write_pgm(const Image& img, const std::string& path);           // c == 1
void write_ppm(const Image& img, const std::string& path);           // c == 3
void write_mask_pgm(const Mask& mask, const std::string& path);      // 0/255 semantics

Image read_pixmap(const std::string& path);                          // P5 -> c=1, P6 -> c=3
Mask read_mask_pgm(const std::string& path);                         // P5 with only 0/255

Image to_rgb(const Image& img);  // replicate gray, pass through color

}  // namespace tokendrop
