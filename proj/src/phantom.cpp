#include "hdseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hdseg/rng.hpp"

namespace hdseg {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> axes;

    bool contains(int z, int y, int x) const {
        const double dz = (z - center[0]) / axes[0];
        const double dy = (y - center[1]) / axes[1];
        const double dx = (x - center[2]) / axes[2];
        return dz * dz + dy * dy + dx * dx <= 1.0;
    }
};

double sphere_radius(double voxels) { return std::cbrt(voxels * 3.0 / (4.0 * kPi)); }

}  // namespace

std::pair<Volume, LabelVolume> generate_phantom(const PhantomConfig& cfg) {
    const int D = cfg.dims[0], H = cfg.dims[1], W = cfg.dims[2];
    if (D <= 0 || H <= 0 || W <= 0) throw std::invalid_argument("generate_phantom: dims must be positive");
    for (double r : cfg.class_ratios)
        if (r <= 0) throw std::invalid_argument("generate_phantom: class ratios must be positive");
    if (cfg.tumors_per_volume < 1)
        throw std::invalid_argument("generate_phantom: tumor count must be >= 1");

    const double total_parts =
        cfg.class_ratios[0] + cfg.class_ratios[1] + cfg.class_ratios[2] + cfg.class_ratios[3] + cfg.class_ratios[4];
    const double voxels = static_cast<double>(D) * H * W;
    // nested region part counts: enhancing(4) < +necrosis(1) < +non-enh(3) < +edema(2)
    const double parts_enh = cfg.class_ratios[4];
    const double parts_nec = parts_enh + cfg.class_ratios[1];
    const double parts_core = parts_nec + cfg.class_ratios[3];
    const double parts_comp = parts_core + cfg.class_ratios[2];
    const double per_tumor = voxels * parts_comp / total_parts / cfg.tumors_per_volume;

    const double r_comp = sphere_radius(per_tumor);
    double r_core = r_comp * std::cbrt(parts_core / parts_comp);
    // necrosis and enhancing are standalone blobs inside the core, placed at
    // random offsets so position alone never identifies them
    double r_nec = sphere_radius(per_tumor * cfg.class_ratios[1] / parts_comp);
    double r_enh = sphere_radius(per_tumor * parts_enh / parts_comp);
    r_enh = std::max(r_enh, 1.2);
    r_nec = std::max(r_nec, 1.2);
    r_core = std::max(r_core, std::max(r_nec, r_enh) + 1.6);
    const double r_edema = std::max(r_comp, r_core + 1.4);

    Rng rng(cfg.seed);
    LabelVolume labels({D, H, W});
    Volume vol({D, H, W, 4});

    const Ellipsoid brain{{D / 2.0, H / 2.0, W / 2.0}, {0.47 * D, 0.47 * H, 0.47 * W}};

    for (int t = 0; t < cfg.tumors_per_volume; ++t) {
        // per-axis jitter shared by the whole nest so shell gaps scale together
        const std::array<double, 3> jitter{rng.uniform(0.9, 1.15), rng.uniform(0.9, 1.15),
                                           rng.uniform(0.9, 1.15)};
        std::array<double, 3> outer{r_edema * jitter[0], r_edema * jitter[1], r_edema * jitter[2]};
        const std::array<double, 3> lo{outer[0] + 1.5, outer[1] + 1.5, outer[2] + 1.5};
        const std::array<double, 3> hi{D - outer[0] - 1.5, H - outer[1] - 1.5, W - outer[2] - 1.5};
        if (lo[0] >= hi[0] || lo[1] >= hi[1] || lo[2] >= hi[2])
            throw std::invalid_argument("generate_phantom: dims too small to fit the smallest ellipsoid");

        std::array<double, 3> center{};
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            center = {rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1]), rng.uniform(lo[2], hi[2])};
            const double dz = (center[0] - brain.center[0]) / (0.6 * brain.axes[0]);
            const double dy = (center[1] - brain.center[1]) / (0.6 * brain.axes[1]);
            const double dx = (center[2] - brain.center[2]) / (0.6 * brain.axes[2]);
            placed = dz * dz + dy * dy + dx * dx <= 1.0;
        }
        if (!placed) center = brain.center;

        auto scaled = [&](double r) {
            return Ellipsoid{center, {r * jitter[0], r * jitter[1], r * jitter[2]}};
        };
        const Ellipsoid e_edema = scaled(r_edema);
        const Ellipsoid e_core = scaled(r_core);

        // independent blob inside the core: jittered size, random offset with
        // a >= 1 voxel wall to the core boundary. Per-axis offsets bounded by
        // 0.55 * slack keep sum((off/slack)^2) <= 1, which is sufficient for
        // containment of aligned ellipsoids.
        auto inner_blob = [&](double r) {
            const double size = rng.uniform(0.92, 1.12);
            Ellipsoid e{center,
                        {r * size * jitter[0], r * size * jitter[1], r * size * jitter[2]}};
            for (int a = 0; a < 3; ++a) {
                const double slack = e_core.axes[static_cast<size_t>(a)] -
                                     e.axes[static_cast<size_t>(a)] - 1.0;
                const double off = slack > 0 ? rng.uniform(-1.0, 1.0) * slack * 0.55 : 0.0;
                e.center[static_cast<size_t>(a)] += off;
            }
            return e;
        };
        const Ellipsoid e_enh = inner_blob(r_enh);
        Ellipsoid e_nec = inner_blob(r_nec);
        for (int attempt = 0; attempt < 50; ++attempt) {
            // conservative disjointness for aligned ellipsoids
            double sep = 0;
            for (int a = 0; a < 3; ++a) {
                const double d = e_nec.center[static_cast<size_t>(a)] -
                                 e_enh.center[static_cast<size_t>(a)];
                const double span = e_nec.axes[static_cast<size_t>(a)] +
                                    e_enh.axes[static_cast<size_t>(a)];
                sep += (d / span) * (d / span);
            }
            if (sep >= 1.0) break;
            e_nec = inner_blob(r_nec);
        }

        const int z0 = std::max(0, static_cast<int>(std::floor(center[0] - e_edema.axes[0] - 1)));
        const int z1 = std::min(D - 1, static_cast<int>(std::ceil(center[0] + e_edema.axes[0] + 1)));
        const int y0 = std::max(0, static_cast<int>(std::floor(center[1] - e_edema.axes[1] - 1)));
        const int y1 = std::min(H - 1, static_cast<int>(std::ceil(center[1] + e_edema.axes[1] + 1)));
        const int x0 = std::max(0, static_cast<int>(std::floor(center[2] - e_edema.axes[2] - 1)));
        const int x1 = std::min(W - 1, static_cast<int>(std::ceil(center[2] + e_edema.axes[2] + 1)));
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    uint8_t& lab = labels.at({z, y, x});
                    if (lab != 0) continue;  // earlier tumor wins
                    if (e_enh.contains(z, y, x))
                        lab = 4;
                    else if (e_nec.contains(z, y, x))
                        lab = 1;
                    else if (e_core.contains(z, y, x))
                        lab = 3;
                    else if (e_edema.contains(z, y, x))
                        lab = 2;
                }
    }

    for (int z = 0; z < D; ++z)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                float* px = vol.data() + ((static_cast<size_t>(z) * H + y) * W + x) * 4;
                if (!brain.contains(z, y, x)) {
                    px[0] = px[1] = px[2] = px[3] = 0.0f;
                    continue;
                }
                const uint8_t lab = labels.at({z, y, x});
                const auto& means = cfg.intensity_means[lab];
                for (int c = 0; c < 4; ++c)
                    px[c] = static_cast<float>(means[static_cast<size_t>(c)] +
                                               cfg.noise_sigma * rng.normal());
            }

    return {std::move(vol), std::move(labels)};
}

SliceFilterResult slice_and_filter(const Volume& vol, const LabelVolume& labels) {
    if (vol.rank() != 4 || labels.rank() != 3 || vol.dim(0) != labels.dim(0) ||
        vol.dim(1) != labels.dim(1) || vol.dim(2) != labels.dim(2))
        throw std::invalid_argument("slice_and_filter: volume and labels dims do not match");
    const int D = vol.dim(0), H = vol.dim(1), W = vol.dim(2), C = vol.dim(3);
    const size_t plane = static_cast<size_t>(H) * W;

    SliceFilterResult out;
    for (int z = 0; z < D; ++z) {
        const uint8_t* lp = labels.data() + static_cast<size_t>(z) * plane;
        bool any = false;
        for (size_t i = 0; i < plane && !any; ++i) any = lp[i] != 0;
        if (!any) continue;

        SlicePair sp;
        sp.index = z;
        sp.image = Tensor<float>({C, H, W});
        sp.labels = Tensor<uint8_t>({H, W});
        const float* vp = vol.data() + static_cast<size_t>(z) * plane * C;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const float* px = vp + (static_cast<size_t>(y) * W + x) * C;
                for (int c = 0; c < C; ++c)
                    sp.image[static_cast<size_t>(c) * plane + static_cast<size_t>(y) * W + x] = px[c];
            }
        std::copy(lp, lp + plane, sp.labels.data());
        out.slices.push_back(std::move(sp));
    }
    out.no_tumor = out.slices.empty();
    return out;
}

Volume normalize(const Volume& vol) {
    if (vol.rank() != 4) throw std::invalid_argument("normalize: volume must be rank 4");
    const int C = vol.dim(3);
    const size_t n = vol.size() / static_cast<size_t>(C);
    Volume out(vol.shape());

    for (int c = 0; c < C; ++c) {
        double sum = 0, count = 0;
        for (size_t i = 0; i < n; ++i) {
            const float v = vol[i * static_cast<size_t>(C) + static_cast<size_t>(c)];
            if (v != 0.0f) {
                sum += v;
                count += 1;
            }
        }
        if (count == 0) continue;  // all zero already
        const double mean = sum / count;
        double ss = 0;
        for (size_t i = 0; i < n; ++i) {
            const float v = vol[i * static_cast<size_t>(C) + static_cast<size_t>(c)];
            if (v != 0.0f) {
                const double d = v - mean;
                ss += d * d;
            }
        }
        const double stddev = std::sqrt(ss / count);
        if (stddev == 0.0) continue;  // zero-variance channel -> zeros
        for (size_t i = 0; i < n; ++i) {
            const size_t o = i * static_cast<size_t>(C) + static_cast<size_t>(c);
            if (vol[o] != 0.0f) out[o] = static_cast<float>((vol[o] - mean) / stddev);
        }
    }
    return out;
}

double background_tumor_ratio(const LabelVolume& labels) {
    size_t bg = 0, tumor = 0;
    for (size_t i = 0; i < labels.size(); ++i) (labels[i] == 0 ? bg : tumor)++;
    if (tumor == 0) return -1.0;
    return static_cast<double>(bg) / static_cast<double>(tumor);
}

double background_tumor_ratio(const std::vector<SlicePair>& slices) {
    size_t bg = 0, tumor = 0;
    for (const auto& s : slices)
        for (size_t i = 0; i < s.labels.size(); ++i) (s.labels[i] == 0 ? bg : tumor)++;
    if (tumor == 0) return -1.0;
    return static_cast<double>(bg) / static_cast<double>(tumor);
}

}  // namespace hdseg
