#include "hdseg/evalrun.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

#include "hdseg/classify.hpp"
#include "hdseg/config.hpp"
#include "hdseg/ops.hpp"
#include "hdseg/phantom.hpp"

namespace hdseg {

Network<float> network_from_checkpoint(const Checkpoint& ck, WeightsSource weights) {
    RunConfig cfg = RunConfig::from_text(ck.config_text);
    Network<float> net = Network<float>::build(cfg.net_config(), cfg.get_u64("seed"));
    for (auto& [name, p] : net.params()) {
        const std::map<std::string, Tensor<float>>* src = &ck.params;
        if (weights == WeightsSource::Ema && p.learnable) {
            if (ck.ema.empty()) throw std::runtime_error("checkpoint has no EMA shadows");
            src = &ck.ema;
        }
        auto it = src->find(name);
        if (it == src->end()) throw std::runtime_error("checkpoint missing parameter: " + name);
        if (!it->second.same_shape(p.value))
            throw std::runtime_error("checkpoint shape mismatch for " + name);
        p.value = it->second;
    }
    return net;
}

LabelVolume predict_labels(Network<float>& net, const Volume& vol, bool hierarchical, int batch) {
    const int D = vol.dim(0), H = vol.dim(1), W = vol.dim(2), C = vol.dim(3);
    if (C != 4) throw std::invalid_argument("predict_labels: volume must have 4 channels");
    const size_t plane = static_cast<size_t>(H) * W;
    LabelVolume pred({D, H, W});

    for (int z0 = 0; z0 < D; z0 += batch) {
        const int B = std::min(batch, D - z0);
        Tensor<float> x({B, 4, H, W});
        for (int b = 0; b < B; ++b) {
            const float* vp = vol.data() + static_cast<size_t>(z0 + b) * plane * 4;
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    const float* px = vp + (static_cast<size_t>(y) * W + xx) * 4;
                    for (int c = 0; c < 4; ++c)
                        x[((static_cast<size_t>(b) * 4 + c) * H + y) * W + xx] = px[c];
                }
        }
        Tape<float> tape;
        Value logits = net.forward(tape, tape.constant(std::move(x)), /*train=*/false, nullptr);
        Value probs = softmax_channels(tape, logits);
        const Tensor<float>& pv = tape.val(probs);
        for (int b = 0; b < B; ++b) {
            uint8_t* out = pred.data() + static_cast<size_t>(z0 + b) * plane;
            const float* pb = pv.data() + static_cast<size_t>(b) * 5 * plane;
            for (size_t j = 0; j < plane; ++j) {
                std::array<double, 5> q;
                for (int c = 0; c < 5; ++c) q[static_cast<size_t>(c)] = pb[static_cast<size_t>(c) * plane + j];
                if (hierarchical) {
                    const double p0 = std::min(1.0, q[1] + q[2] + q[3] + q[4]);
                    const double p1 = std::min(p0, q[1] + q[3] + q[4]);
                    const double p2 = std::min(p1, q[4]);
                    switch (hierarchical_decide(p0, p1, p2)) {
                        case RegionDecision::NonTumor: out[j] = 0; break;
                        case RegionDecision::EdemaOnly: out[j] = 2; break;
                        case RegionDecision::CoreNonEnhancing: out[j] = 3; break;
                        case RegionDecision::Enhancing: out[j] = 4; break;
                    }
                } else {
                    out[j] = static_cast<uint8_t>(argmax_decide(q));
                }
            }
        }
    }
    return pred;
}

EvalOutput evaluate_checkpoint(const Checkpoint& ck, const std::vector<CasePaths>& manifest,
                               const EvalOptions& opts) {
    if (manifest.empty()) throw std::invalid_argument("eval: empty evaluation set");
    Network<float> net = network_from_checkpoint(ck, opts.weights);

    bool hierarchical = false;
    if (opts.classifier == ClassifierKind::Hierarchical) {
        hierarchical = true;
    } else if (opts.classifier == ClassifierKind::Auto) {
        RunConfig cfg = RunConfig::from_text(ck.config_text);
        hierarchical = cfg.loss_kind() == LossKind::Hdice;
    }

    EvalOutput out;
    out.classifier_used = hierarchical ? ClassifierKind::Hierarchical : ClassifierKind::Argmax;
    for (const auto& c : manifest) {
        Volume vol = normalize(read_bvol_volume(c.volume));
        LabelVolume truth = read_bvol_labels(c.labels);
        LabelVolume pred = predict_labels(net, vol, hierarchical, opts.batch);
        out.per_volume.push_back(volume_scores(pred, truth));
    }
    out.mean = mean_scores(out.per_volume);
    return out;
}

}  // namespace hdseg
