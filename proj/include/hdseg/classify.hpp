#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>

namespace hdseg {

// Mutually exclusive per-pixel outcome of the hierarchical classifier.
// enhancing implies core implies complete, so the induced region masks nest.
enum class RegionDecision : uint8_t { NonTumor = 0, EdemaOnly = 1, CoreNonEnhancing = 2, Enhancing = 3 };

struct RegionBits {
    bool complete = false;
    bool core = false;
    bool enhancing = false;
};

// Gate chain on the nested probabilities: tumor iff p0 > 1-p0, then core iff
// p1 > p0-p1, then enhancing iff p2 > p1-p2. Ties fall to the less specific
// class.
inline RegionDecision hierarchical_decide(double p0, double p1, double p2) {
    if (p0 < 0.0 || p0 > 1.0 || p1 < 0.0 || p1 > 1.0 || p2 < 0.0 || p2 > 1.0)
        throw std::invalid_argument("hierarchical_decide: inputs outside [0,1]");
    if (!(p0 > 1.0 - p0)) return RegionDecision::NonTumor;
    if (!(p1 > p0 - p1)) return RegionDecision::EdemaOnly;
    if (!(p2 > p1 - p2)) return RegionDecision::CoreNonEnhancing;
    return RegionDecision::Enhancing;
}

inline RegionBits decision_masks(RegionDecision d) {
    RegionBits b;
    b.complete = d != RegionDecision::NonTumor;
    b.core = d == RegionDecision::CoreNonEnhancing || d == RegionDecision::Enhancing;
    b.enhancing = d == RegionDecision::Enhancing;
    return b;
}

// Index of the max class probability; ties break to the lowest index.
inline int argmax_decide(const std::array<double, 5>& probs) {
    int best = 0;
    for (int c = 1; c < 5; ++c)
        if (probs[static_cast<size_t>(c)] > probs[static_cast<size_t>(best)]) best = c;
    return best;
}

}  // namespace hdseg
