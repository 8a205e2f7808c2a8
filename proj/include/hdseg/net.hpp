#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdseg/ops.hpp"
#include "hdseg/rng.hpp"
#include "hdseg/tape.hpp"
#include "hdseg/tensor.hpp"

namespace hdseg {

enum class EncoderKind { VggStyle, ResnetStyle, UnetStyle, ResidualUnet };
enum class DecoderKind { SkipAdd, Concat };

struct NetConfig {
    EncoderKind encoder = EncoderKind::ResidualUnet;
    DecoderKind decoder = DecoderKind::Concat;
    int depth = 3;       // number of down-sampling stages
    int base_width = 8;  // channels at the first stage
    int in_channels = 4;
    int num_classes = 5;
    int input_size = 64;
    // branch weights for the skip-add decoder, deepest stage first
    std::array<double, 3> skip_weights{1.0, 2.0, 4.0};
};

// crop a centered window; used to trim transposed-conv overhang so fused maps
// align (K = 2*stride upsampling grows H to (H+1)*stride)
template <typename T>
Value crop_spatial(Tape<T>& tape, Value x, int top, int left, int out_h, int out_w) {
    const Tensor<T>& xv = tape.val(x);
    detail::require(xv.rank() == 4, "crop_spatial: input must be rank 4");
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    detail::require(top >= 0 && left >= 0 && top + out_h <= H && left + out_w <= W,
                    "crop_spatial: window out of bounds");
    Tensor<T> y({N, C, out_h, out_w});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = xv.data() + ((static_cast<size_t>(n) * C + c) * H + top) * W + left;
            T* dst = y.data() + (static_cast<size_t>(n) * C + c) * out_h * out_w;
            for (int r = 0; r < out_h; ++r)
                std::copy(src + static_cast<size_t>(r) * W, src + static_cast<size_t>(r) * W + out_w,
                          dst + static_cast<size_t>(r) * out_w);
        }
    auto back = [top, left, N, C, H, W, out_h, out_w](Tape<T>& t, int self) {
        const auto& nd = t.node(Value{self});
        const int xi = nd.inputs[0];
        if (!t.needs_grad(xi)) return;
        Tensor<T>& gx = t.grad(xi);
        const Tensor<T>& gy = nd.grad;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                T* dst = gx.data() + ((static_cast<size_t>(n) * C + c) * H + top) * W + left;
                const T* src = gy.data() + (static_cast<size_t>(n) * C + c) * out_h * out_w;
                for (int r = 0; r < out_h; ++r)
                    kern::add(dst + static_cast<size_t>(r) * W, src + static_cast<size_t>(r) * out_w,
                              dst + static_cast<size_t>(r) * W, static_cast<size_t>(out_w));
            }
    };
    return tape.emit(std::move(y), {x.idx}, back, "crop_spatial");
}

template <typename T>
class Network {
public:
    static constexpr double kBnEps = 1e-5;
    static constexpr double kBnMomentum = 0.9;

    static Network build(const NetConfig& cfg, uint64_t seed);

    Value forward(Tape<T>& tape, Value input, bool train, BnStaged<T>* staged = nullptr);

    const NetConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const std::vector<std::string>& layers() const { return layers_; }
    const std::vector<std::string>& encoder_taps_used() const { return taps_used_; }

private:
    struct BnRef {
        Param<T>* gamma = nullptr;
        Param<T>* beta = nullptr;
        Param<T>* rmean = nullptr;
        Param<T>* rvar = nullptr;
    };
    struct ConvBnAct {
        Param<T>* w = nullptr;
        BnRef bn;
        int stride = 1;
        int pad = 0;
        bool act = true;
    };
    struct ResUnit {
        std::vector<ConvBnAct> branch;  // act flags: all but the last true
        Param<T>* proj = nullptr;       // 1x1 projection when channels change
    };
    struct Stage {
        std::vector<ConvBnAct> convs;  // plain conv stack (vgg/unet)
        std::vector<ResUnit> units;    // residual stack (resnet/res-unet)
    };
    struct DecStage {
        Param<T>* up = nullptr;  // transposed conv, bilinear-initialized
        Stage body;
    };

    NetConfig cfg_;
    ParamStore<T> params_;
    std::vector<std::string> layers_;
    std::vector<std::string> taps_used_;

    std::vector<Stage> enc_;
    Stage stem_;    // resnet stem
    Stage bottom_;  // unet bottom block / vgg head
    std::vector<DecStage> dec_;
    Param<T>* classifier_w = nullptr;
    Param<T>* classifier_b = nullptr;
    // skip-add pieces: score convs for (shallow, mid, deep), two x2 fuse
    // upsamplers and the final x2^(depth-2) upsampler
    std::array<Param<T>*, 3> score_w{nullptr, nullptr, nullptr};
    std::array<Param<T>*, 3> score_b{nullptr, nullptr, nullptr};
    Param<T>* fuse_up1 = nullptr;
    Param<T>* fuse_up2 = nullptr;
    Param<T>* final_up = nullptr;

    // ---- builder helpers ----

    BnRef make_bn(const std::string& prefix, int ch) {
        BnRef bn;
        bn.gamma = &params_.add(prefix + ".gamma", Tensor<T>::full({ch}, T(1)));
        bn.beta = &params_.add(prefix + ".beta", Tensor<T>({ch}));
        bn.rmean = &params_.add(prefix + ".running_mean", Tensor<T>({ch}), false);
        bn.rvar = &params_.add(prefix + ".running_var", Tensor<T>::full({ch}, T(1)), false);
        return bn;
    }

    Param<T>* make_conv_w(const std::string& name, int ci, int co, int k, Rng& rng) {
        Tensor<T> w({co, ci, k, k});
        const double stddev = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
        for (size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.normal(0.0, stddev));
        std::ostringstream os;
        os << name << ": conv " << k << "x" << k << " " << ci << "->" << co;
        layers_.push_back(os.str());
        return &params_.add(name + ".w", std::move(w));
    }

    ConvBnAct make_cbr(const std::string& prefix, int ci, int co, int k, Rng& rng, bool act = true) {
        ConvBnAct c;
        c.w = make_conv_w(prefix, ci, co, k, rng);
        c.bn = make_bn(prefix + ".bn", co);
        c.pad = k / 2;  // same padding
        c.act = act;
        return c;
    }

    ResUnit make_unit(const std::string& prefix, int ci, int co, bool bottleneck, Rng& rng) {
        ResUnit u;
        if (bottleneck) {
            const int mid = std::max(1, co / 2);
            u.branch.push_back(make_cbr(prefix + ".conv1", ci, mid, 1, rng, true));
            u.branch.push_back(make_cbr(prefix + ".conv2", mid, mid, 3, rng, true));
            u.branch.push_back(make_cbr(prefix + ".conv3", mid, co, 1, rng, false));
        } else {
            u.branch.push_back(make_cbr(prefix + ".conv1", ci, co, 3, rng, true));
            u.branch.push_back(make_cbr(prefix + ".conv2", co, co, 3, rng, false));
        }
        if (ci != co) {
            Tensor<T> w({co, ci, 1, 1});
            const double stddev = std::sqrt(2.0 / ci);
            for (size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.normal(0.0, stddev));
            u.proj = &params_.add(prefix + ".shortcut.w", std::move(w));
            layers_.push_back(prefix + ".shortcut: conv 1x1 " + std::to_string(ci) + "->" +
                              std::to_string(co));
        }
        return u;
    }

    Param<T>* make_up(const std::string& name, int ci, int co, int k) {
        layers_.push_back(name + ": tconv " + std::to_string(k) + "x" + std::to_string(k) + " " +
                          std::to_string(ci) + "->" + std::to_string(co) + " (bilinear init)");
        return &params_.add(name + ".w", bilinear_init<T>(ci, co, k));
    }

    // ---- forward helpers ----

    Value run_cbr(Tape<T>& tape, Value x, const ConvBnAct& c, bool train, BnStaged<T>* staged) {
        Value w = tape.param(*c.w);
        Value y = conv2d(tape, x, w, c.stride, c.pad);
        Value g = tape.param(*c.bn.gamma);
        Value b = tape.param(*c.bn.beta);
        y = batch_norm(tape, y, g, b, *c.bn.rmean, *c.bn.rvar, T(kBnEps), T(kBnMomentum), train, staged);
        return c.act ? relu(tape, y) : y;
    }

    Value run_unit(Tape<T>& tape, Value x, const ResUnit& u, bool train, BnStaged<T>* staged) {
        Value h = x;
        for (const auto& c : u.branch) h = run_cbr(tape, h, c, train, staged);
        Value shortcut = x;
        if (u.proj) shortcut = conv2d(tape, x, tape.param(*u.proj), 1, 0);
        return add(tape, h, shortcut);
    }

    Value run_stage(Tape<T>& tape, Value x, const Stage& s, bool train, BnStaged<T>* staged) {
        for (const auto& c : s.convs) x = run_cbr(tape, x, c, train, staged);
        for (const auto& u : s.units) x = run_unit(tape, x, u, train, staged);
        return x;
    }

    Value upsample2_aligned(Tape<T>& tape, Value x, Param<T>& up, int stride) {
        const int H = tape.val(x).dim(2), W = tape.val(x).dim(3);
        Value y = transposed_conv2d(tape, x, tape.param(up), stride);
        // (H-1)*s + 2s = (H+1)*s; trim s/2 per side down to H*s
        return crop_spatial(tape, y, stride / 2, stride / 2, H * stride, W * stride);
    }
};

template <typename T>
Network<T> Network<T>::build(const NetConfig& cfg, uint64_t seed) {
    if (cfg.num_classes != 5) throw std::invalid_argument("build_network: num_classes must be 5");
    if (cfg.depth < 1) throw std::invalid_argument("build_network: depth must be >= 1");
    if (cfg.base_width < 1) throw std::invalid_argument("build_network: base_width must be >= 1");
    if (cfg.input_size % (1 << cfg.depth) != 0)
        throw std::invalid_argument("build_network: indivisible input size");
    const bool fcn = cfg.decoder == DecoderKind::SkipAdd;
    const bool unet_enc =
        cfg.encoder == EncoderKind::UnetStyle || cfg.encoder == EncoderKind::ResidualUnet;
    if (fcn == unet_enc)
        throw std::invalid_argument(
            "build_network: unsupported encoder/decoder combination (skip_add pairs with "
            "vgg/resnet encoders, concat with unet-style encoders)");
    if (fcn && cfg.depth < 3)
        throw std::invalid_argument("build_network: skip_add decoder needs depth >= 3");

    Network net;
    net.cfg_ = cfg;
    Rng rng(seed);
    const int w0 = cfg.base_width;
    auto width = [w0](int stage) { return w0 << stage; };

    switch (cfg.encoder) {
        case EncoderKind::VggStyle: {
            int ci = cfg.in_channels;
            for (int i = 0; i < cfg.depth; ++i) {
                Stage s;
                const std::string p = "enc" + std::to_string(i);
                s.convs.push_back(net.make_cbr(p + ".conv1", ci, width(i), 3, rng));
                s.convs.push_back(net.make_cbr(p + ".conv2", width(i), width(i), 3, rng));
                net.enc_.push_back(std::move(s));
                ci = width(i);
            }
            // fc6/fc7 analogue past the deepest pooling
            net.bottom_.convs.push_back(net.make_cbr("head.conv1", ci, width(cfg.depth), 3, rng));
            net.bottom_.convs.push_back(net.make_cbr("head.conv2", width(cfg.depth), width(cfg.depth), 1, rng));
            break;
        }
        case EncoderKind::ResnetStyle: {
            net.stem_.convs.push_back(net.make_cbr("stem.conv", cfg.in_channels, w0, 3, rng));
            int ci = w0;
            for (int i = 0; i < cfg.depth; ++i) {
                Stage s;
                const int co = 2 * width(i);
                s.units.push_back(net.make_unit("enc" + std::to_string(i) + ".unit0", ci, co, true, rng));
                net.enc_.push_back(std::move(s));
                ci = co;
            }
            break;
        }
        case EncoderKind::UnetStyle:
        case EncoderKind::ResidualUnet: {
            const bool residual = cfg.encoder == EncoderKind::ResidualUnet;
            int ci = cfg.in_channels;
            for (int i = 0; i < cfg.depth; ++i) {
                Stage s;
                const std::string p = "enc" + std::to_string(i);
                if (residual) {
                    s.units.push_back(net.make_unit(p + ".unit", ci, width(i), false, rng));
                } else {
                    s.convs.push_back(net.make_cbr(p + ".conv1", ci, width(i), 3, rng));
                    s.convs.push_back(net.make_cbr(p + ".conv2", width(i), width(i), 3, rng));
                }
                net.enc_.push_back(std::move(s));
                ci = width(i);
            }
            const int cb = width(cfg.depth);
            if (residual) {
                net.bottom_.units.push_back(net.make_unit("bottom.unit", ci, cb, false, rng));
            } else {
                net.bottom_.convs.push_back(net.make_cbr("bottom.conv1", ci, cb, 3, rng));
                net.bottom_.convs.push_back(net.make_cbr("bottom.conv2", cb, cb, 3, rng));
            }
            break;
        }
    }

    if (cfg.decoder == DecoderKind::Concat) {
        const bool residual = cfg.encoder == EncoderKind::ResidualUnet;
        int ci = width(cfg.depth);
        for (int j = cfg.depth - 1; j >= 0; --j) {
            DecStage d;
            const std::string p = "dec" + std::to_string(j);
            d.up = net.make_up(p + ".up", ci, width(j), 4);
            const int cc = 2 * width(j);  // upsampled + mirrored tap
            if (residual) {
                d.body.units.push_back(net.make_unit(p + ".unit", cc, width(j), false, rng));
            } else {
                d.body.convs.push_back(net.make_cbr(p + ".conv1", cc, width(j), 3, rng));
                d.body.convs.push_back(net.make_cbr(p + ".conv2", width(j), width(j), 3, rng));
            }
            net.dec_.push_back(std::move(d));
            ci = width(j);
            net.taps_used_.push_back("enc" + std::to_string(j));
        }
        Tensor<T> cw({cfg.num_classes, width(0), 1, 1});
        const double stddev = std::sqrt(2.0 / width(0));
        for (size_t i = 0; i < cw.size(); ++i) cw[i] = static_cast<T>(rng.normal(0.0, stddev));
        net.classifier_w = &net.params_.add("classifier.w", std::move(cw));
        net.classifier_b = &net.params_.add("classifier.b", Tensor<T>({cfg.num_classes}));
        net.layers_.push_back("classifier: conv 1x1 " + std::to_string(width(0)) + "->" +
                              std::to_string(cfg.num_classes));
    } else {
        // scores for stages depth-3 (shallow), depth-2 (mid), depth-1 (deep,
        // through the head when present)
        const bool vgg = cfg.encoder == EncoderKind::VggStyle;
        auto enc_out_ch = [&](int stage) { return vgg ? width(stage) : 2 * width(stage); };
        const std::array<int, 3> src_ch{enc_out_ch(cfg.depth - 3), enc_out_ch(cfg.depth - 2),
                                        vgg ? width(cfg.depth) : enc_out_ch(cfg.depth - 1)};
        const std::array<const char*, 3> names{"score_shallow", "score_mid", "score_deep"};
        for (int k = 0; k < 3; ++k) {
            Tensor<T> sw({cfg.num_classes, src_ch[static_cast<size_t>(k)], 1, 1});
            const double stddev = std::sqrt(2.0 / src_ch[static_cast<size_t>(k)]);
            for (size_t i = 0; i < sw.size(); ++i) sw[i] = static_cast<T>(rng.normal(0.0, stddev));
            net.score_w[static_cast<size_t>(k)] =
                &net.params_.add(std::string(names[static_cast<size_t>(k)]) + ".w", std::move(sw));
            net.score_b[static_cast<size_t>(k)] = &net.params_.add(
                std::string(names[static_cast<size_t>(k)]) + ".b", Tensor<T>({cfg.num_classes}));
            net.layers_.push_back(std::string(names[static_cast<size_t>(k)]) + ": conv 1x1 " +
                                  std::to_string(src_ch[static_cast<size_t>(k)]) + "->" +
                                  std::to_string(cfg.num_classes));
        }
        net.fuse_up1 = net.make_up("fuse_up1", cfg.num_classes, cfg.num_classes, 4);
        net.fuse_up2 = net.make_up("fuse_up2", cfg.num_classes, cfg.num_classes, 4);
        const int f = 1 << (cfg.depth - 2);
        net.final_up = net.make_up("final_up", cfg.num_classes, cfg.num_classes, 2 * f);
        for (int k = cfg.depth - 3; k <= cfg.depth - 1; ++k)
            net.taps_used_.push_back("enc" + std::to_string(k));
    }
    return net;
}

template <typename T>
Value Network<T>::forward(Tape<T>& tape, Value input, bool train, BnStaged<T>* staged) {
    const Tensor<T>& xv = tape.val(input);
    if (xv.rank() != 4 || xv.dim(1) != cfg_.in_channels)
        throw std::invalid_argument("forward: shape mismatch, expected (N," +
                                    std::to_string(cfg_.in_channels) + ",H,W)");
    if (xv.dim(2) % (1 << cfg_.depth) != 0 || xv.dim(3) % (1 << cfg_.depth) != 0)
        throw std::invalid_argument("forward: spatial extent not divisible by 2^depth");

    if (cfg_.decoder == DecoderKind::Concat) {
        std::vector<Value> taps;
        Value x = input;
        for (const auto& s : enc_) {
            x = run_stage(tape, x, s, train, staged);
            taps.push_back(x);
            x = maxpool2d(tape, x, 2, 2);
        }
        x = run_stage(tape, x, bottom_, train, staged);
        for (size_t j = 0; j < dec_.size(); ++j) {
            const DecStage& d = dec_[j];
            Value up = upsample2_aligned(tape, x, *d.up, 2);
            x = concat_channels(tape, up, taps[taps.size() - 1 - j]);
            x = run_stage(tape, x, d.body, train, staged);
        }
        Value logits = conv2d(tape, x, tape.param(*classifier_w), 1, 0, tape.param(*classifier_b));
        return logits;
    }

    // skip-add decoder
    Value x = input;
    if (!stem_.convs.empty()) x = run_stage(tape, x, stem_, train, staged);
    std::vector<Value> pooled;
    for (const auto& s : enc_) {
        if (cfg_.encoder == EncoderKind::VggStyle) {
            x = run_stage(tape, x, s, train, staged);
            x = maxpool2d(tape, x, 2, 2);
        } else {
            x = maxpool2d(tape, x, 2, 2);
            x = run_stage(tape, x, s, train, staged);
        }
        pooled.push_back(x);
    }
    Value deep = bottom_.convs.empty() && bottom_.units.empty()
                     ? pooled[pooled.size() - 1]
                     : run_stage(tape, pooled[pooled.size() - 1], bottom_, train, staged);

    auto score = [&](Value src, int k) {
        return conv2d(tape, src, tape.param(*score_w[static_cast<size_t>(k)]), 1, 0,
                      tape.param(*score_b[static_cast<size_t>(k)]));
    };
    Value s_deep = score(deep, 2);
    Value s_mid = score(pooled[pooled.size() - 2], 1);
    Value s_shallow = score(pooled[pooled.size() - 3], 0);

    Value cur = scale(tape, s_deep, static_cast<T>(cfg_.skip_weights[0]));
    cur = upsample2_aligned(tape, cur, *fuse_up1, 2);
    cur = add(tape, cur, scale(tape, s_mid, static_cast<T>(cfg_.skip_weights[1])));
    cur = upsample2_aligned(tape, cur, *fuse_up2, 2);
    cur = add(tape, cur, scale(tape, s_shallow, static_cast<T>(cfg_.skip_weights[2])));
    const int f = 1 << (cfg_.depth - 2);
    return upsample2_aligned(tape, cur, *final_up, f);
}

// name <-> kind mappings shared by config parsing and checkpoints
inline const char* arch_name(const NetConfig& cfg) {
    if (cfg.encoder == EncoderKind::VggStyle) return "fcn8s-vgg";
    if (cfg.encoder == EncoderKind::ResnetStyle) return "fcn8s-resnet";
    if (cfg.encoder == EncoderKind::UnetStyle) return "unet";
    return "res-unet";
}

inline void set_arch(NetConfig& cfg, const std::string& name) {
    if (name == "fcn8s-vgg") {
        cfg.encoder = EncoderKind::VggStyle;
        cfg.decoder = DecoderKind::SkipAdd;
    } else if (name == "fcn8s-resnet") {
        cfg.encoder = EncoderKind::ResnetStyle;
        cfg.decoder = DecoderKind::SkipAdd;
    } else if (name == "unet") {
        cfg.encoder = EncoderKind::UnetStyle;
        cfg.decoder = DecoderKind::Concat;
    } else if (name == "res-unet") {
        cfg.encoder = EncoderKind::ResidualUnet;
        cfg.decoder = DecoderKind::Concat;
    } else {
        throw std::invalid_argument("unknown architecture: " + name +
                                    " (expected fcn8s-vgg | fcn8s-resnet | unet | res-unet)");
    }
}

}  // namespace hdseg
