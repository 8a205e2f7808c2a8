#pragma once

#include <string>
#include <vector>

#include "hdseg/bvol.hpp"
#include "hdseg/checkpoint.hpp"
#include "hdseg/metrics.hpp"
#include "hdseg/net.hpp"

namespace hdseg {

enum class ClassifierKind { Auto, Argmax, Hierarchical };
enum class WeightsSource { Raw, Ema };

struct EvalOptions {
    ClassifierKind classifier = ClassifierKind::Auto;
    WeightsSource weights = WeightsSource::Ema;
    int batch = 8;
};

struct EvalOutput {
    RegionScores mean;
    std::vector<RegionScores> per_volume;
    ClassifierKind classifier_used = ClassifierKind::Argmax;
};

// Rebuilds the network from the checkpoint's embedded config, loads the
// requested weights, and scores every manifest volume (all slices) with
// per-volume confusion aggregation and arithmetic averaging across volumes.
EvalOutput evaluate_checkpoint(const Checkpoint& ck, const std::vector<CasePaths>& manifest,
                               const EvalOptions& opts);

// Per-slice predicted label map (argmax route) or hierarchical decisions
// mapped to labels {0: non-tumor, 2: edema, 3: core, 4: enhancing}; used by
// eval and by report rendering.
LabelVolume predict_labels(Network<float>& net, const Volume& normalized_vol, bool hierarchical,
                           int batch);

Network<float> network_from_checkpoint(const Checkpoint& ck, WeightsSource weights);

}  // namespace hdseg
