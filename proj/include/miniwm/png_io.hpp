#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace miniwm {

// Self-contained PNG reader/writer over zlib. Supports what the dataset
// format needs: 8-bit RGB for frames and 8-bit indexed (palette) for
// category masks. Non-interlaced only.
struct PngImage {
    int width = 0;
    int height = 0;
    int channels = 0;                          // 3 = RGB, 1 = palette index
    std::vector<uint8_t> pixels;               // row-major, `channels` per pixel
    std::vector<std::array<uint8_t, 3>> palette;  // used when channels == 1
};

void write_png_rgb(const std::string& path, int width, int height, const uint8_t* rgb);
void write_png_indexed(const std::string& path, int width, int height, const uint8_t* idx,
                       const std::vector<std::array<uint8_t, 3>>& palette);

PngImage read_png(const std::string& path);

}  // namespace miniwm
