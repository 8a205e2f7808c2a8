#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hdseg/bvol.hpp"
#include "hdseg/trainer.hpp"

namespace hdseg {

void write_pgm(const std::string& path, int width, int height, const std::vector<uint8_t>& gray);
void write_ppm(const std::string& path, int width, int height, const std::vector<uint8_t>& rgb);

// class palette: 0 black, 1 necrosis red, 2 edema green, 3 non-enhancing
// blue, 4 enhancing white
std::array<uint8_t, 3> label_color(uint8_t label);

// loss curve rendered into a grayscale plot
void render_loss_curve(const std::string& path, const std::vector<LossPoint>& history,
                       int width = 640, int height = 320);

// ground truth and prediction for one axial slice, side by side
void render_slice_comparison(const std::string& path, const LabelVolume& truth,
                             const LabelVolume& pred, int slice_index);

}  // namespace hdseg
