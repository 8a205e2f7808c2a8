#include <doctest.h>

#include <vector>

#include "hdseg/metrics.hpp"
#include "hdseg/rng.hpp"

using namespace hdseg;

namespace {

Tensor<uint8_t> random_labels(Rng& rng, std::vector<int> shape, int max_label = 4) {
    Tensor<uint8_t> t(std::move(shape));
    for (size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<uint8_t>(rng.uniform_index(static_cast<uint64_t>(max_label) + 1));
    return t;
}

// brute-force pixel-pair confusion, independent of the streaming counter
Confusion brute_confusion(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth) {
    Confusion c;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, t = truth[i] != 0;
        if (p && t) ++c.tp;
        if (p && !t) ++c.fp;
        if (!p && t) ++c.fn;
        if (!p && !t) ++c.tn;
    }
    return c;
}

}  // namespace

TEST_CASE("region_masks examples") {
    Tensor<uint8_t> labels({3}, {0, 2, 4});
    const RegionMaskSet m = region_masks(labels.vec(), labels.size());
    CHECK(m.complete == std::vector<uint8_t>{0, 1, 1});
    CHECK(m.core == std::vector<uint8_t>{0, 0, 1});
    CHECK(m.enhancing == std::vector<uint8_t>{0, 0, 1});

    Tensor<uint8_t> necrosis({1}, {1});
    const RegionMaskSet m2 = region_masks(necrosis.vec(), 1);
    CHECK(m2.complete[0] == 1);
    CHECK(m2.core[0] == 1);
    CHECK(m2.enhancing[0] == 0);

    Tensor<uint8_t> zeros({5});
    const RegionMaskSet m3 = region_masks(zeros.vec(), 5);
    for (size_t i = 0; i < 5; ++i) {
        CHECK(m3.complete[i] == 0);
        CHECK(m3.core[i] == 0);
        CHECK(m3.enhancing[i] == 0);
    }

    Tensor<uint8_t> bad({1}, {5});
    CHECK_THROWS_WITH_AS(region_masks(bad.vec(), 1), doctest::Contains("label out of range"),
                         std::invalid_argument);
}

TEST_CASE("binary_confusion examples") {
    {
        std::vector<uint8_t> truth{1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
        const Confusion c = binary_confusion(truth, truth);
        CHECK(c.tp == 4);
        CHECK(c.fp == 0);
        CHECK(c.fn == 0);
        CHECK(c.tn == 6);
        CHECK(c.total() == 10);
    }
    {
        std::vector<uint8_t> pred{1, 1, 0, 0};
        std::vector<uint8_t> truth{0, 0, 1, 1};
        CHECK(binary_confusion(pred, truth).tp == 0);
    }
    {
        // truth 4 positives, pred 6 positives with 3 overlapping
        std::vector<uint8_t> truth{1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
        std::vector<uint8_t> pred{1, 1, 1, 0, 1, 1, 1, 0, 0, 0};
        const Confusion c = binary_confusion(pred, truth);
        CHECK(c.tp == 3);
        CHECK(c.fp == 3);
        CHECK(c.fn == 1);
    }
    CHECK_THROWS_WITH_AS(binary_confusion({1, 0}, {1}), doctest::Contains("shape mismatch"),
                         std::invalid_argument);
}

TEST_CASE("region_scores: example quadruple and degenerate conventions") {
    {
        Confusion c{3, 3, 1, 3};
        const Scores s = region_scores(c);
        CHECK(s.precision == doctest::Approx(0.5));
        CHECK(s.recall == doctest::Approx(0.75));
        CHECK(s.miou == doctest::Approx(3.0 / 7.0));
        CHECK(s.dice == doctest::Approx(0.6));
    }
    {
        // perfect nonempty prediction
        Confusion c{10, 0, 0, 90};
        const Scores s = region_scores(c);
        CHECK(s.precision == 1.0);
        CHECK(s.recall == 1.0);
        CHECK(s.miou == 1.0);
        CHECK(s.dice == 1.0);
    }
    {
        // empty truth, empty prediction: all 1.0 by convention
        Confusion c{0, 0, 0, 100};
        const Scores s = region_scores(c);
        CHECK(s.precision == 1.0);
        CHECK(s.recall == 1.0);
        CHECK(s.miou == 1.0);
        CHECK(s.dice == 1.0);
    }
    {
        // empty truth, nonempty prediction
        Confusion c{0, 5, 0, 95};
        const Scores s = region_scores(c);
        CHECK(s.precision == 0.0);
        CHECK(s.recall == 1.0);
        CHECK(s.miou == 0.0);
        CHECK(s.dice == 0.0);
    }
    {
        // nonempty truth, empty prediction
        Confusion c{0, 0, 5, 95};
        const Scores s = region_scores(c);
        CHECK(s.precision == 0.0);
        CHECK(s.recall == 0.0);
    }
}

TEST_CASE("streaming scores equal brute-force counting on random label maps; miou <= dice") {
    Rng rng(314);
    for (int rep = 0; rep < 100; ++rep) {
        Tensor<uint8_t> pred = random_labels(rng, {4, 6, 6});
        Tensor<uint8_t> truth = random_labels(rng, {4, 6, 6});
        const RegionMaskSet pm = region_masks(pred);
        const RegionMaskSet tm = region_masks(truth);
        using Member = std::vector<uint8_t> RegionMaskSet::*;
        for (Member region :
             {&RegionMaskSet::complete, &RegionMaskSet::core, &RegionMaskSet::enhancing}) {
            const Confusion fast = binary_confusion(pm.*region, tm.*region);
            const Confusion slow = brute_confusion(pm.*region, tm.*region);
            CHECK(fast.tp == slow.tp);
            CHECK(fast.fp == slow.fp);
            CHECK(fast.fn == slow.fn);
            CHECK(fast.tn == slow.tn);
            const Scores s = region_scores(fast);
            CHECK(s.miou <= s.dice + 1e-15);
        }
    }
}

TEST_CASE("region_masks outputs nest for any label volume") {
    Rng rng(625);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor<uint8_t> labels = random_labels(rng, {2, 8, 8});
        const RegionMaskSet m = region_masks(labels);
        for (size_t i = 0; i < labels.size(); ++i) {
            CHECK(m.enhancing[i] <= m.core[i]);
            CHECK(m.core[i] <= m.complete[i]);
        }
    }
}

TEST_CASE("eval_table: single volume, two-volume mean, empty set error") {
    Rng rng(9);
    Tensor<uint8_t> truth = random_labels(rng, {2, 4, 4});
    {
        const RegionScores one = eval_table({truth}, {truth});
        CHECK(one.complete.dice == 1.0);
        CHECK(one.enhancing.dice == 1.0);
    }
    {
        // dice 0.8 and 0.6 average to 0.7 (construct via known confusions)
        std::vector<RegionScores> per(2);
        per[0].complete.dice = 0.8;
        per[1].complete.dice = 0.6;
        const RegionScores mean = mean_scores(per);
        CHECK(mean.complete.dice == doctest::Approx(0.7));
    }
    CHECK_THROWS_WITH_AS(eval_table({}, {}), doctest::Contains("empty evaluation set"),
                         std::invalid_argument);
}

TEST_CASE("scores_csv emits the region table layout") {
    RegionScores rs;
    rs.complete = {0.5, 0.75, 3.0 / 7.0, 0.6};
    const std::string csv = scores_csv(rs);
    CHECK(csv.find("region,precision,recall,miou,dice\n") == 0);
    CHECK(csv.find("complete,0.5,0.75,0.428571,0.6\n") != std::string::npos);
    CHECK(csv.find("core,") != std::string::npos);
    CHECK(csv.find("enhancing,") != std::string::npos);
}
