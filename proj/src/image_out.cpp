#include "hdseg/image_out.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace hdseg {

namespace {

void write_netpbm(const std::string& path, const char* magic, int width, int height, int channels,
                  const std::vector<uint8_t>& data) {
    if (data.size() != static_cast<size_t>(width) * height * channels)
        throw std::invalid_argument("image write: buffer size does not match dimensions");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("image write: cannot open " + path);
    f << magic << "\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!f) throw std::runtime_error("image write: failed for " + path);
}

}  // namespace

void write_pgm(const std::string& path, int width, int height, const std::vector<uint8_t>& gray) {
    write_netpbm(path, "P5", width, height, 1, gray);
}

void write_ppm(const std::string& path, int width, int height, const std::vector<uint8_t>& rgb) {
    write_netpbm(path, "P6", width, height, 3, rgb);
}

std::array<uint8_t, 3> label_color(uint8_t label) {
    switch (label) {
        case 1: return {220, 40, 40};
        case 2: return {40, 200, 40};
        case 3: return {60, 80, 230};
        case 4: return {255, 255, 255};
        default: return {0, 0, 0};
    }
}

void render_loss_curve(const std::string& path, const std::vector<LossPoint>& history, int width,
                       int height) {
    std::vector<uint8_t> img(static_cast<size_t>(width) * height, 255);
    if (!history.empty()) {
        double lo = history[0].loss, hi = history[0].loss;
        for (const auto& p : history) {
            lo = std::min(lo, p.loss);
            hi = std::max(hi, p.loss);
        }
        if (hi - lo < 1e-12) hi = lo + 1.0;
        const int margin = 8;
        const int pw = width - 2 * margin, ph = height - 2 * margin;
        auto plot = [&](int x, int y, uint8_t v) {
            if (x >= 0 && x < width && y >= 0 && y < height)
                img[static_cast<size_t>(y) * width + x] = v;
        };
        int prev_x = -1, prev_y = -1;
        for (size_t i = 0; i < history.size(); ++i) {
            const int x = margin + static_cast<int>(static_cast<double>(i) * (pw - 1) /
                                                    std::max<size_t>(1, history.size() - 1));
            const int y = margin + static_cast<int>((1.0 - (history[i].loss - lo) / (hi - lo)) * (ph - 1));
            if (prev_x >= 0) {
                const int steps = std::max(std::abs(x - prev_x), std::abs(y - prev_y)) + 1;
                for (int s = 0; s <= steps; ++s) {
                    const int xi = prev_x + (x - prev_x) * s / steps;
                    const int yi = prev_y + (y - prev_y) * s / steps;
                    plot(xi, yi, 0);
                }
            } else {
                plot(x, y, 0);
            }
            prev_x = x;
            prev_y = y;
        }
        for (int x = 0; x < width; ++x) plot(x, height - margin, 128);
        for (int y = 0; y < height; ++y) plot(margin, y, 128);
    }
    write_pgm(path, width, height, img);
}

void render_slice_comparison(const std::string& path, const LabelVolume& truth,
                             const LabelVolume& pred, int slice_index) {
    if (truth.shape() != pred.shape())
        throw std::invalid_argument("render_slice_comparison: shape mismatch");
    const int D = truth.dim(0), H = truth.dim(1), W = truth.dim(2);
    if (slice_index < 0 || slice_index >= D)
        throw std::invalid_argument("render_slice_comparison: slice index out of range");
    const int gap = 4;
    const int width = 2 * W + gap;
    std::vector<uint8_t> rgb(static_cast<size_t>(width) * H * 3, 90);
    const size_t plane = static_cast<size_t>(H) * W;
    const uint8_t* tp = truth.data() + static_cast<size_t>(slice_index) * plane;
    const uint8_t* pp = pred.data() + static_cast<size_t>(slice_index) * plane;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const auto tc = label_color(tp[static_cast<size_t>(y) * W + x]);
            const auto pc = label_color(pp[static_cast<size_t>(y) * W + x]);
            uint8_t* left = rgb.data() + (static_cast<size_t>(y) * width + x) * 3;
            uint8_t* right = rgb.data() + (static_cast<size_t>(y) * width + W + gap + x) * 3;
            std::copy(tc.begin(), tc.end(), left);
            std::copy(pc.begin(), pc.end(), right);
        }
    write_ppm(path, width, H, rgb);
}

}  // namespace hdseg
