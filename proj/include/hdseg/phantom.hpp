#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "hdseg/bvol.hpp"
#include "hdseg/tensor.hpp"

namespace hdseg {

// Synthetic nested-region phantom. Labels are built from concentric
// ellipsoids (enhancing inside necrosis inside core inside edema) whose radii
// are derived from the configured 5-class frequency ratios, so label
// histograms track the ratios as volumes grow. Intensities are per-class,
// per-channel Gaussians inside a brain ellipsoid; outside the brain every
// channel is exactly zero.
struct PhantomConfig {
    uint64_t seed = 1;
    std::array<int, 3> dims{32, 64, 64};  // D,H,W
    std::array<double, 5> class_ratios{2262, 2, 16, 7, 1};
    int tumors_per_volume = 1;
    // row = class 0..4 (normal, necrosis, edema, non-enhancing, enhancing),
    // col = channel (T1, T1c, T2, FLAIR). FLAIR separates the complete region
    // strongly; enhancing is separated from its non-enhancing neighborhood
    // only weakly (T1c gap under one noise sigma), which is what starves a
    // frequency-weighted loss of the rarest class.
    std::array<std::array<double, 4>, 5> intensity_means{{
        {0.50, 0.50, 0.45, 0.40},
        {0.30, 0.38, 0.55, 0.62},
        {0.45, 0.47, 0.62, 0.75},
        {0.36, 0.44, 0.58, 0.66},
        {0.37, 0.60, 0.57, 0.65},
    }};
    double noise_sigma = 0.08;
};

std::pair<Volume, LabelVolume> generate_phantom(const PhantomConfig& cfg);

struct SlicePair {
    Tensor<float> image;    // (4,H,W) channel-first
    Tensor<uint8_t> labels;  // (H,W)
    int index = 0;           // original axial position
};

struct SliceFilterResult {
    std::vector<SlicePair> slices;
    bool no_tumor = false;
};

// Keeps exactly the axial slices whose label plane contains any nonzero
// label, in order.
SliceFilterResult slice_and_filter(const Volume& vol, const LabelVolume& labels);

// Per-channel z-score over nonzero voxels; zero voxels stay zero. A channel
// with no spread is set to all zeros.
Volume normalize(const Volume& vol);

// background:tumor voxel ratio of a label set (used to verify the filter
// direction); returns -1 when there are no tumor voxels
double background_tumor_ratio(const LabelVolume& labels);
double background_tumor_ratio(const std::vector<SlicePair>& slices);

}  // namespace hdseg
