#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdseg/tensor.hpp"

namespace hdseg {

struct Confusion {
    uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    uint64_t total() const { return tp + fp + fn + tn; }

    void count(bool pred, bool truth) {
        if (pred && truth)
            ++tp;
        else if (pred && !truth)
            ++fp;
        else if (!pred && truth)
            ++fn;
        else
            ++tn;
    }
};

struct Scores {
    double precision = 0, recall = 0, miou = 0, dice = 0;
};

struct RegionScores {
    Scores complete, core, enhancing;
};

// Division convention for empty denominators: 1.0 when the truth region is
// empty (and hence nothing was there to find), 0.0 otherwise.
inline Scores region_scores(const Confusion& c) {
    const bool truth_empty = (c.tp + c.fn) == 0;
    auto ratio = [truth_empty](uint64_t num, uint64_t den) -> double {
        if (den == 0) return truth_empty ? 1.0 : 0.0;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    Scores s;
    s.precision = ratio(c.tp, c.tp + c.fp);
    s.recall = ratio(c.tp, c.tp + c.fn);
    s.miou = ratio(c.tp, c.tp + c.fp + c.fn);
    s.dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    return s;
}

// complete = {1,2,3,4}, core = {1,3,4}, enhancing = {4}
struct RegionMaskSet {
    std::vector<uint8_t> complete, core, enhancing;
};

template <typename LabelContainer>
inline RegionMaskSet region_masks(const LabelContainer& labels, size_t n) {
    RegionMaskSet m;
    m.complete.resize(n);
    m.core.resize(n);
    m.enhancing.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const uint8_t y = labels[i];
        if (y > 4) throw std::invalid_argument("region_masks: label out of range");
        m.complete[i] = y >= 1;
        m.core[i] = (y == 1 || y == 3 || y == 4);
        m.enhancing[i] = y == 4;
    }
    return m;
}

inline RegionMaskSet region_masks(const Tensor<uint8_t>& labels) {
    return region_masks(labels.vec(), labels.size());
}

inline Confusion binary_confusion(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("binary_confusion: shape mismatch");
    Confusion c;
    for (size_t i = 0; i < pred.size(); ++i) c.count(pred[i] != 0, truth[i] != 0);
    return c;
}

struct RegionConfusion {
    Confusion complete, core, enhancing;
};

inline RegionScores score_regions(const RegionConfusion& rc) {
    return RegionScores{region_scores(rc.complete), region_scores(rc.core), region_scores(rc.enhancing)};
}

// Per-volume label maps scored against truth, then averaged arithmetically
// across volumes (row layout of the paper-style tables).
inline RegionScores volume_scores(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& truth) {
    if (pred.shape() != truth.shape()) throw std::invalid_argument("volume_scores: shape mismatch");
    const RegionMaskSet pm = region_masks(pred);
    const RegionMaskSet tm = region_masks(truth);
    RegionConfusion rc;
    rc.complete = binary_confusion(pm.complete, tm.complete);
    rc.core = binary_confusion(pm.core, tm.core);
    rc.enhancing = binary_confusion(pm.enhancing, tm.enhancing);
    return score_regions(rc);
}

inline RegionScores mean_scores(const std::vector<RegionScores>& per_volume) {
    if (per_volume.empty()) throw std::invalid_argument("mean_scores: empty evaluation set");
    RegionScores out;
    auto acc = [](Scores& dst, const Scores& s) {
        dst.precision += s.precision;
        dst.recall += s.recall;
        dst.miou += s.miou;
        dst.dice += s.dice;
    };
    for (const auto& v : per_volume) {
        acc(out.complete, v.complete);
        acc(out.core, v.core);
        acc(out.enhancing, v.enhancing);
    }
    const double inv = 1.0 / static_cast<double>(per_volume.size());
    auto div = [inv](Scores& s) {
        s.precision *= inv;
        s.recall *= inv;
        s.miou *= inv;
        s.dice *= inv;
    };
    div(out.complete);
    div(out.core);
    div(out.enhancing);
    return out;
}

inline RegionScores eval_table(const std::vector<Tensor<uint8_t>>& preds,
                               const std::vector<Tensor<uint8_t>>& truths) {
    if (preds.size() != truths.size()) throw std::invalid_argument("eval_table: volume count mismatch");
    if (preds.empty()) throw std::invalid_argument("eval_table: empty evaluation set");
    std::vector<RegionScores> per;
    per.reserve(preds.size());
    for (size_t i = 0; i < preds.size(); ++i) per.push_back(volume_scores(preds[i], truths[i]));
    return mean_scores(per);
}

inline std::string scores_csv(const RegionScores& rs) {
    std::ostringstream os;
    os.precision(6);
    os << "region,precision,recall,miou,dice\n";
    auto row = [&](const char* name, const Scores& s) {
        os << name << ',' << s.precision << ',' << s.recall << ',' << s.miou << ',' << s.dice << '\n';
    };
    row("complete", rs.complete);
    row("core", rs.core);
    row("enhancing", rs.enhancing);
    return os.str();
}

}  // namespace hdseg
