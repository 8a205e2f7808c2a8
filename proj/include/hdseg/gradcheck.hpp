#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "hdseg/tape.hpp"

namespace hdseg {

// Central-difference verification oracle. `build` assembles a scalar-rooted
// graph from leaves that mirror `inputs` one-to-one. Returns the max over all
// coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|).
template <typename T, typename BuildFn>
T finite_diff_check(BuildFn build, std::vector<Tensor<T>*> inputs, T h) {
    if (h <= T(0)) throw std::invalid_argument("finite_diff_check: h must be positive");

    std::vector<Param<T>> params(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
        params[i].name = "fd" + std::to_string(i);
        params[i].value = *inputs[i];
        params[i].zero_grad();
    }

    Tape<T> tape;
    std::vector<Value> leaves;
    leaves.reserve(params.size());
    for (auto& p : params) leaves.push_back(tape.param(p));
    Value root = build(tape, leaves);
    tape.backward(root);

    auto eval = [&]() -> T {
        Tape<T> t2;
        std::vector<Value> ls;
        ls.reserve(params.size());
        for (auto& p : params) ls.push_back(t2.constant(Tensor<T>(p.value)));
        return t2.val(build(t2, ls))[0];
    };

    T worst = 0;
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& v = params[i].value;
        const Tensor<T>& g = params[i].grad;
        for (size_t j = 0; j < v.size(); ++j) {
            const T keep = v[j];
            v[j] = keep + h;
            const T fp = eval();
            v[j] = keep - h;
            const T fm = eval();
            v[j] = keep;
            const T numeric = (fp - fm) / (T(2) * h);
            const T analytic = g[j];
            const T denom = std::max(T(1), std::max(std::abs(analytic), std::abs(numeric)));
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace hdseg
