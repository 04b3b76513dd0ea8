#pragma once

#include <string>
#include <vector>

#include "miniwm/render.hpp"

namespace miniwm {

// On-disk sample layout:
//   <dir>/frames/cam{n}/{t:04d}.png   8-bit RGB
//   <dir>/labels.json                 spec echo, cameras, timestamps, 2D boxes
//   <dir>/masks/cam{n}/{t:04d}.png    8-bit palette, index = 1 + category
void write_sample(const std::string& dir, const VideoSample& sample);
VideoSample read_sample(const std::string& dir);

std::vector<std::string> list_sample_dirs(const std::string& root);

std::string sample_dir_name(int64_t index);

}  // namespace miniwm
