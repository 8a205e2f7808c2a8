#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "hdseg/gradcheck.hpp"
#include "hdseg/losses.hpp"
#include "hdseg/rng.hpp"
#include "oracle_losses.hpp"

using namespace hdseg;

namespace {

// pixel rows packed into a (1,5,1,N) logits/probs tensor + (1,1,N) labels
Tensor<double> pack_rows(const std::vector<oracle::Row5>& rows) {
    const int n = static_cast<int>(rows.size());
    Tensor<double> t({1, 5, 1, n});
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 5; ++c)
            t[static_cast<size_t>(c) * n + i] = rows[static_cast<size_t>(i)][static_cast<size_t>(c)];
    return t;
}

Tensor<uint8_t> pack_labels(const std::vector<int>& labels) {
    Tensor<uint8_t> t({1, 1, static_cast<int>(labels.size())});
    for (size_t i = 0; i < labels.size(); ++i) t[i] = static_cast<uint8_t>(labels[i]);
    return t;
}

std::vector<oracle::Row5> random_logit_rows(Rng& rng, size_t n, double lo = -3.0, double hi = 3.0) {
    std::vector<oracle::Row5> rows(n);
    for (auto& r : rows)
        for (auto& v : r) v = rng.uniform(lo, hi);
    return rows;
}

std::vector<oracle::Row5> random_prob_rows(Rng& rng, size_t n) {
    std::vector<oracle::Row5> rows(n);
    for (auto& r : rows) {
        double s = 0;
        for (auto& v : r) {
            v = rng.uniform(0.02, 1.0);
            s += v;
        }
        for (auto& v : r) v /= s;
    }
    return rows;
}

std::vector<int> random_labels(Rng& rng, size_t n) {
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.uniform_index(5));
    return y;
}

constexpr double kLn5 = 1.6094379124341003;

}  // namespace

TEST_CASE("softmax_ce examples") {
    {
        Tape<double> tape;
        Tensor<uint8_t> labels({1, 1, 3});
        labels[0] = 0;
        labels[1] = 3;
        labels[2] = 4;
        Value loss = softmax_ce(tape, tape.constant(Tensor<double>({1, 5, 1, 3})), labels);
        CHECK(tape.val(loss)[0] == doctest::Approx(kLn5).epsilon(1e-9));
    }
    {
        Tape<double> tape;
        std::vector<oracle::Row5> rows{{2, 0, 0, 0, 0}};
        Value loss = softmax_ce(tape, tape.constant(pack_rows(rows)), pack_labels({0}));
        CHECK(tape.val(loss)[0] ==
              doctest::Approx(-std::log(std::exp(2.0) / (std::exp(2.0) + 4.0))).epsilon(1e-9));
        CHECK(tape.val(loss)[0] == doctest::Approx(0.4328).epsilon(1e-3));
    }
    {
        // margin -> infinity drives the loss to 0
        Tape<double> tape;
        std::vector<oracle::Row5> rows{{40, 0, 0, 0, 0}};
        Value loss = softmax_ce(tape, tape.constant(pack_rows(rows)), pack_labels({0}));
        CHECK(tape.val(loss)[0] < 1e-12);
    }
    {
        Tape<double> tape;
        Tensor<uint8_t> bad({1, 1, 1});
        bad[0] = 7;
        CHECK_THROWS_WITH_AS(softmax_ce(tape, tape.constant(Tensor<double>({1, 5, 1, 1})), bad),
                             doctest::Contains("label out of range"), std::invalid_argument);
    }
}

TEST_CASE("weighted_ce examples and uniform-weight proportionality") {
    const std::array<double, 5> paper_w{0.1, 0.35, 0.1, 0.1, 0.35};
    {
        Tape<double> tape;
        Value loss = weighted_ce(tape, tape.constant(Tensor<double>({1, 5, 1, 1})), pack_labels({0}),
                                 paper_w);
        CHECK(tape.val(loss)[0] == doctest::Approx(0.1 * kLn5).epsilon(1e-9));
    }
    {
        Tape<double> tape;
        Value loss = weighted_ce(tape, tape.constant(Tensor<double>({1, 5, 1, 1})), pack_labels({1}),
                                 paper_w);
        CHECK(tape.val(loss)[0] == doctest::Approx(0.35 * kLn5).epsilon(1e-9));
    }
    {
        // uniform weights w=0.2: exactly 0.2 * softmax_ce
        Rng rng(404);
        const auto rows = random_logit_rows(rng, 9);
        const auto labels = random_labels(rng, 9);
        Tape<double> tape;
        Value plain = softmax_ce(tape, tape.constant(pack_rows(rows)), pack_labels(labels));
        Value weighted = weighted_ce(tape, tape.constant(pack_rows(rows)), pack_labels(labels),
                                     {0.2, 0.2, 0.2, 0.2, 0.2});
        CHECK(tape.val(weighted)[0] == doctest::Approx(0.2 * tape.val(plain)[0]).epsilon(1e-12));
    }
    {
        Tape<double> tape;
        CHECK_THROWS_WITH_AS(weighted_ce(tape, tape.constant(Tensor<double>({1, 5, 1, 1})),
                                         pack_labels({0}), {0.3, 0.3, 0.3, 0.3, 0.3}),
                             doctest::Contains("weights not summing to 1"), std::invalid_argument);
    }
}

TEST_CASE("bootstrap_loss examples") {
    {
        // true-class probs (0.95, 0.5, 0.8) at t=0.9 keeps the last two
        std::vector<oracle::Row5> rows(3);
        rows[0] = {0.95, 0.0125, 0.0125, 0.0125, 0.0125};
        rows[1] = {0.5, 0.125, 0.125, 0.125, 0.125};
        rows[2] = {0.8, 0.05, 0.05, 0.05, 0.05};
        Tape<double> tape;
        BootstrapInfo info;
        Value loss = bootstrap_loss(tape, tape.constant(pack_rows(rows)), pack_labels({0, 0, 0}), 0.9,
                                    &info);
        CHECK(tape.val(loss)[0] ==
              doctest::Approx((-std::log(0.5) - std::log(0.8)) / 2.0).epsilon(1e-9));
        CHECK(tape.val(loss)[0] == doctest::Approx(0.4581).epsilon(1e-3));
        CHECK(info.retained == 2);
        CHECK_FALSE(info.fully_filtered);
    }
    {
        // t = 1.0 equals plain mean -log p over all pixels
        Rng rng(7);
        const auto rows = random_prob_rows(rng, 12);
        const auto labels = random_labels(rng, 12);
        Tape<double> tape;
        Value loss = bootstrap_loss(tape, tape.constant(pack_rows(rows)), pack_labels(labels), 1.0,
                                    nullptr);
        double mean = 0;
        for (size_t i = 0; i < rows.size(); ++i)
            mean -= std::log(rows[i][static_cast<size_t>(labels[i])]);
        mean /= static_cast<double>(rows.size());
        CHECK(tape.val(loss)[0] == doctest::Approx(mean).epsilon(1e-12));
    }
    {
        // every pixel confident -> zero loss, flagged
        std::vector<oracle::Row5> rows(2);
        rows[0] = {0.96, 0.01, 0.01, 0.01, 0.01};
        rows[1] = {0.98, 0.005, 0.005, 0.005, 0.005};
        Tape<double> tape;
        BootstrapInfo info;
        Value loss = bootstrap_loss(tape, tape.constant(pack_rows(rows)), pack_labels({0, 0}), 0.9,
                                    &info);
        CHECK(tape.val(loss)[0] == 0.0);
        CHECK(info.fully_filtered);
    }
}

TEST_CASE("ss_loss examples") {
    auto run_ss = [](const std::vector<double>& p, const std::vector<int>& r, double lambda,
                     double eps) {
        Tensor<double> rt({static_cast<int>(r.size())});
        for (size_t i = 0; i < r.size(); ++i) rt[i] = r[i];
        Tape<double> tape;
        Tensor<double> pt({static_cast<int>(p.size())});
        for (size_t i = 0; i < p.size(); ++i) pt[i] = p[i];
        return tape.val(ss_loss(tape, tape.constant(std::move(pt)), rt, lambda, eps))[0];
    };
    CHECK(run_ss({1, 0}, {1, 0}, 0.5, 1e-5) == doctest::Approx(0.0));
    CHECK(run_ss({0.5, 0.5}, {1, 0}, 0.5, 1e-5) == doctest::Approx(0.25).epsilon(1e-4));
    CHECK(run_ss({0, 0}, {1, 1}, 1.0, 1e-5) == doctest::Approx(2.0 / (2.0 + 1e-5)).epsilon(1e-9));
}

TEST_CASE("dice_loss examples (printed two-sided form)") {
    auto run_dice = [](const std::vector<double>& p, const std::vector<int>& r, double eps) {
        Tensor<double> rt({static_cast<int>(r.size())});
        for (size_t i = 0; i < r.size(); ++i) rt[i] = r[i];
        Tensor<double> pt({static_cast<int>(p.size())});
        for (size_t i = 0; i < p.size(); ++i) pt[i] = p[i];
        Tape<double> tape;
        return tape.val(dice_loss(tape, tape.constant(std::move(pt)), rt, eps))[0];
    };
    const double eps = 1e-5;
    CHECK(run_dice({1, 1, 0, 0}, {1, 1, 0, 0}, eps) ==
          doctest::Approx(1.0 - 2.0 * (2.0 + eps) / (4.0 + eps)).epsilon(1e-9));
    CHECK(run_dice({1, 1, 0, 0}, {1, 1, 0, 0}, eps) == doctest::Approx(-2.5e-6).epsilon(1e-2));
    CHECK(run_dice({1, 1, 1, 1}, {0, 0, 0, 0}, eps) == doctest::Approx(1.0 - 5.0e-6).epsilon(1e-6));
    CHECK(run_dice({1, 1, 1, 1}, {1, 1, 1, 1}, eps) == doctest::Approx(-0.5).epsilon(1e-4));
}

TEST_CASE("aggregate_hierarchy examples and nesting invariant") {
    auto agg = [](const oracle::Row5& q) { return aggregate_row<double>(q); };
    {
        const auto h = agg({1, 0, 0, 0, 0});
        CHECK(h[0] == 0.0);
        CHECK(h[1] == 0.0);
        CHECK(h[2] == 0.0);
    }
    {
        const auto h = agg({0, 0, 0, 0, 1});
        CHECK(h[0] == 1.0);
        CHECK(h[1] == 1.0);
        CHECK(h[2] == 1.0);
    }
    {
        const auto h = agg({0.2, 0.1, 0.3, 0.2, 0.2});
        CHECK(h[0] == doctest::Approx(0.8));
        CHECK(h[1] == doctest::Approx(0.5));
        CHECK(h[2] == doctest::Approx(0.2));
    }
    // nesting p2 <= p1 <= p0 and r2 <= r1 <= r0 on random input
    Rng rng(11);
    const auto rows = random_prob_rows(rng, 64);
    Tape<double> tape;
    HierValues<double> h = aggregate_hierarchy(tape, tape.constant(pack_rows(rows)));
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(tape.val(h.p2)[i] <= tape.val(h.p1)[i] + 1e-12);
        CHECK(tape.val(h.p1)[i] <= tape.val(h.p0)[i] + 1e-12);
    }
    const auto labels = random_labels(rng, 64);
    HierMasks<double> m = hierarchy_masks<double>(pack_labels(labels));
    for (size_t i = 0; i < labels.size(); ++i) {
        CHECK(m.r2[i] <= m.r1[i]);
        CHECK(m.r1[i] <= m.r0[i]);
    }
}

TEST_CASE("hdice_loss spec examples") {
    const double eps = 1e-5;
    auto run_hdice = [eps](const oracle::Row5& q, int label) {
        Tape<double> tape;
        std::vector<oracle::Row5> rows{q};
        Value probs = tape.constant(pack_rows(rows));
        HierValues<double> hp = aggregate_hierarchy(tape, probs);
        HierMasks<double> m = hierarchy_masks<double>(pack_labels({label}));
        HdiceValues<double> hd = hdice_loss(tape, hp, m, eps);
        return std::array<double, 4>{tape.val(hd.dl0)[0], tape.val(hd.dl1)[0], tape.val(hd.dl2)[0],
                                     tape.val(hd.dlh)[0]};
    };
    {
        // perfect edema pixel
        const auto r = run_hdice({0, 0, 1, 0, 0}, 2);
        CHECK(r[0] == doctest::Approx(-0.5).epsilon(1e-4));
        CHECK(r[1] == doctest::Approx(-0.5).epsilon(1e-4));
        CHECK(r[2] == doctest::Approx(-1.0).epsilon(1e-4));
        CHECK(r[3] == doctest::Approx(-2.0 / 3.0).epsilon(1e-4));
    }
    {
        // perfect background pixel
        const auto r = run_hdice({1, 0, 0, 0, 0}, 0);
        CHECK(r[0] == doctest::Approx(-0.5).epsilon(1e-4));
        CHECK(r[1] == doctest::Approx(-1.0).epsilon(1e-4));
        CHECK(r[2] == doctest::Approx(-1.0).epsilon(1e-4));
        CHECK(r[3] == doctest::Approx(-5.0 / 6.0).epsilon(1e-4));
    }
    {
        // enhancing truth, all-background prediction
        const auto r = run_hdice({1, 0, 0, 0, 0}, 4);
        CHECK(r[0] == doctest::Approx(1.0).epsilon(1e-4));
        CHECK(r[1] == doctest::Approx(0.0).epsilon(1e-3));
        CHECK(r[2] == doctest::Approx(0.0).epsilon(1e-3));
        CHECK(r[3] == doctest::Approx(1.0 / 3.0).epsilon(1e-3));
    }
}

TEST_CASE("engine losses match the independent oracle to 1e-10 on random inputs") {
    Rng rng(31337);
    const double eps = 1e-5;
    for (int rep = 0; rep < 100; ++rep) {
        const size_t n = 1 + rng.uniform_index(16);
        const auto logit_rows = random_logit_rows(rng, n);
        const auto prob_rows = random_prob_rows(rng, n);
        const auto labels = random_labels(rng, n);

        Tape<double> tape;
        // ce
        CHECK(tape.val(softmax_ce(tape, tape.constant(pack_rows(logit_rows)), pack_labels(labels)))[0] ==
              doctest::Approx(oracle::softmax_ce(logit_rows, labels)).epsilon(1e-10));
        // wce (paper weights)
        const std::array<double, 5> w{0.1, 0.35, 0.1, 0.1, 0.35};
        CHECK(tape.val(weighted_ce(tape, tape.constant(pack_rows(logit_rows)), pack_labels(labels),
                                   w))[0] ==
              doctest::Approx(oracle::weighted_ce(logit_rows, labels, w)).epsilon(1e-10));
        // bootstrap at t = 0.9
        CHECK(tape.val(bootstrap_loss(tape, tape.constant(pack_rows(prob_rows)), pack_labels(labels),
                                      0.9, nullptr))[0] ==
              doctest::Approx(oracle::bootstrap(prob_rows, labels, 0.9)).epsilon(1e-10));
        // binary ss and dice on the complete-tumor reduction
        std::vector<double> p0(n);
        std::vector<int> r0(n);
        for (size_t i = 0; i < n; ++i) {
            p0[i] = prob_rows[i][1] + prob_rows[i][2] + prob_rows[i][3] + prob_rows[i][4];
            r0[i] = labels[i] >= 1 ? 1 : 0;
        }
        Tensor<double> pt({static_cast<int>(n)});
        Tensor<double> rt({static_cast<int>(n)});
        for (size_t i = 0; i < n; ++i) {
            pt[i] = p0[i];
            rt[i] = r0[i];
        }
        const double lambda = rng.uniform(0.0, 1.0);
        CHECK(tape.val(ss_loss(tape, tape.constant(Tensor<double>(pt)), rt, lambda, eps))[0] ==
              doctest::Approx(oracle::ss(p0, r0, lambda, eps)).epsilon(1e-10));
        CHECK(tape.val(dice_loss(tape, tape.constant(Tensor<double>(pt)), rt, eps))[0] ==
              doctest::Approx(oracle::dice(p0, r0, eps)).epsilon(1e-10));
        // hdice, all four outputs
        HierValues<double> hp = aggregate_hierarchy(tape, tape.constant(pack_rows(prob_rows)));
        HierMasks<double> m = hierarchy_masks<double>(pack_labels(labels));
        HdiceValues<double> hd = hdice_loss(tape, hp, m, eps);
        const auto ref = oracle::hdice(prob_rows, labels, eps);
        CHECK(tape.val(hd.dl0)[0] == doctest::Approx(ref.dl0).epsilon(1e-10));
        CHECK(tape.val(hd.dl1)[0] == doctest::Approx(ref.dl1).epsilon(1e-10));
        CHECK(tape.val(hd.dl2)[0] == doctest::Approx(ref.dl2).epsilon(1e-10));
        CHECK(tape.val(hd.dlh)[0] == doctest::Approx(ref.dlh).epsilon(1e-10));
    }
}

TEST_CASE("loss gradients pass finite differences") {
    Rng rng(999);
    const double tol = 1e-4;
    for (int rep = 0; rep < 6; ++rep) {
        const size_t n = 4 + rng.uniform_index(8);
        auto logit_rows = random_logit_rows(rng, n);
        const auto labels = random_labels(rng, n);
        Tensor<double> logits = pack_rows(logit_rows);
        const Tensor<uint8_t> lab = pack_labels(labels);

        const double ce_err = finite_diff_check<double>(
            [&](Tape<double>& t, const std::vector<Value>& in) { return softmax_ce(t, in[0], lab); },
            {&logits}, 1e-5);
        CHECK(ce_err < tol);

        const double wce_err = finite_diff_check<double>(
            [&](Tape<double>& t, const std::vector<Value>& in) {
                return weighted_ce(t, in[0], lab, {0.1, 0.35, 0.1, 0.1, 0.35});
            },
            {&logits}, 1e-5);
        CHECK(wce_err < tol);

        // bootstrap through softmax so the graph is the training graph;
        // keep true-class probabilities away from the threshold so the
        // retained set is stable under the finite-difference perturbation
        const double t_thresh = 0.9;
        const double boot_err = finite_diff_check<double>(
            [&](Tape<double>& t, const std::vector<Value>& in) {
                Value probs = softmax_channels(t, in[0]);
                return bootstrap_loss(t, probs, lab, t_thresh, nullptr);
            },
            {&logits}, 1e-6);
        CHECK(boot_err < tol);

        // full hdice chain through softmax and the hierarchy sums
        const double hdice_err = finite_diff_check<double>(
            [&](Tape<double>& t, const std::vector<Value>& in) {
                Value probs = softmax_channels(t, in[0]);
                HierValues<double> hp = aggregate_hierarchy(t, probs);
                HierMasks<double> m = hierarchy_masks<double>(lab);
                return hdice_loss(t, hp, m, 1e-5).dlh;
            },
            {&logits}, 1e-5);
        CHECK(hdice_err < tol);

        // ss and dice on the complete-tumor probability
        HierMasks<double> m = hierarchy_masks<double>(lab);
        const double ss_err = finite_diff_check<double>(
            [&](Tape<double>& t, const std::vector<Value>& in) {
                Value probs = softmax_channels(t, in[0]);
                Value p0 = sum_channels(t, probs, {1, 2, 3, 4});
                return ss_loss(t, p0, m.r0, 0.5, 1e-5);
            },
            {&logits}, 1e-5);
        CHECK(ss_err < tol);

        const double dice_err = finite_diff_check<double>(
            [&](Tape<double>& t, const std::vector<Value>& in) {
                Value probs = softmax_channels(t, in[0]);
                Value p0 = sum_channels(t, probs, {1, 2, 3, 4});
                return dice_loss(t, p0, m.r0, 1e-5);
            },
            {&logits}, 1e-5);
        CHECK(dice_err < tol);
    }
}

TEST_CASE("loss properties: ss nonnegativity, dice permutation invariance, standard toggle") {
    Rng rng(52);
    for (int rep = 0; rep < 30; ++rep) {
        const size_t n = 2 + rng.uniform_index(14);
        std::vector<double> p(n);
        std::vector<int> r(n);
        for (size_t i = 0; i < n; ++i) {
            p[i] = rng.uniform(0.0, 1.0);
            r[i] = rng.uniform() < 0.5 ? 0 : 1;
        }
        const double lambda = rng.uniform(0.0, 1.0);
        const double v = oracle::ss(p, r, lambda, 1e-5);
        CHECK(v >= 0.0);

        // permutation invariance of the dice loss
        std::vector<double> p2(p);
        std::vector<int> r2(r);
        for (size_t i = n - 1; i > 0; --i) {
            const size_t j = rng.uniform_index(i + 1);
            std::swap(p2[i], p2[j]);
            std::swap(r2[i], r2[j]);
        }
        CHECK(oracle::dice(p, r, 1e-5) == doctest::Approx(oracle::dice(p2, r2, 1e-5)).epsilon(1e-12));
    }
    // ss == 0 iff p == r on every counted pixel
    CHECK(oracle::ss({1, 0, 1}, {1, 0, 1}, 0.7, 1e-5) == doctest::Approx(0.0));
    CHECK(oracle::ss({1, 0, 0.999}, {1, 0, 1}, 0.7, 1e-5) > 0.0);

    // standard DSC toggle: 1 - (2*sum pr + eps)/(sum p+r + eps), minimum 0 at p == r
    Tape<double> tape;
    Tensor<double> pt({4}, {1, 1, 0, 0});
    Tensor<double> rt({4}, {1, 1, 0, 0});
    const double std_dsc = tape.val(dice_loss(tape, tape.constant(std::move(pt)), rt, 1e-5, true))[0];
    CHECK(std_dsc == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("hdice optional level weights") {
    Rng rng(88);
    const auto rows = random_prob_rows(rng, 8);
    const auto labels = random_labels(rng, 8);
    Tape<double> tape;
    HierValues<double> hp = aggregate_hierarchy(tape, tape.constant(pack_rows(rows)));
    HierMasks<double> m = hierarchy_masks<double>(pack_labels(labels));
    HdiceValues<double> hd = hdice_loss(tape, hp, m, 1e-5, {0.5, 0.3, 0.2});
    const double expect = 0.5 * tape.val(hd.dl0)[0] + 0.3 * tape.val(hd.dl1)[0] +
                          0.2 * tape.val(hd.dl2)[0];
    CHECK(tape.val(hd.dlh)[0] == doctest::Approx(expect).epsilon(1e-12));
}
