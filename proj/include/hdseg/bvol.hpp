#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hdseg/tensor.hpp"

namespace hdseg {

// 4-channel intensity volume, shape (D,H,W,4), channels (T1, T1c, T2, FLAIR).
using Volume = Tensor<float>;

// Per-voxel labels 0-4, shape (D,H,W).
using LabelVolume = Tensor<uint8_t>;

// BVOL container: magic "BVOL1\0", four little-endian u32 dims (D,H,W,C; C=1
// for label volumes), one dtype byte (0 = f32, 1 = u8), then the row-major
// payload, little-endian throughout.
void write_bvol(const std::string& path, const Volume& vol);
void write_bvol(const std::string& path, const LabelVolume& labels);
Volume read_bvol_volume(const std::string& path);
LabelVolume read_bvol_labels(const std::string& path);

struct CasePaths {
    std::string volume;
    std::string labels;
};

// One "volume_path<TAB>label_path" line per case.
void write_manifest(const std::string& path, const std::vector<CasePaths>& cases);
std::vector<CasePaths> read_manifest(const std::string& path);

}  // namespace hdseg
