#include "hdseg/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "hdseg/rng.hpp"

namespace hdseg {

double lr_at(int64_t iter, const TrainConfig& cfg) {
    if (iter < 0) throw std::invalid_argument("lr_at: iteration must be >= 0");
    const int64_t steps = iter / cfg.lr_decay_every;
    return cfg.base_lr * std::pow(cfg.lr_decay, static_cast<double>(steps));
}

void adam_step(ParamStore<float>& params, const GradMap& grads, AdamState& state, float lr) {
    state.t += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (const auto& [name, g] : grads) {
        Param<float>& p = params.get(name);
        if (!p.learnable) throw std::invalid_argument("adam_step: gradient for non-learnable " + name);
        if (!g.same_shape(p.value)) throw std::invalid_argument("adam_step: shape mismatch for " + name);
        auto [mit, fresh_m] = state.m.try_emplace(name, Tensor<float>(g.shape()));
        auto [vit, fresh_v] = state.v.try_emplace(name, Tensor<float>(g.shape()));
        Tensor<float>& m = mit->second;
        Tensor<float>& v = vit->second;
        for (size_t i = 0; i < g.size(); ++i) {
            m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g[i]);
            v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * static_cast<double>(g[i]) * g[i]);
            const double mhat = m[i] / corr1;
            const double vhat = v[i] / corr2;
            p.value[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + state.cfg.eps));
        }
    }
}

void ema_update(GradMap& shadow, const ParamStore<float>& params, float decay) {
    if (decay <= 0.0f || decay >= 1.0f) throw std::invalid_argument("ema_update: decay must be in (0,1)");
    for (auto& [name, s] : shadow) {
        const Param<float>& p = params.get(name);
        for (size_t i = 0; i < s.size(); ++i) s[i] = decay * s[i] + (1.0f - decay) * p.value[i];
    }
}

GradMap average_gradients(const std::vector<GradMap>& per_worker) {
    if (per_worker.empty()) throw std::invalid_argument("average_gradients: empty worker list");
    GradMap out = per_worker[0];
    for (size_t w = 1; w < per_worker.size(); ++w) {
        const GradMap& g = per_worker[w];
        if (g.size() != out.size())
            throw std::invalid_argument("average_gradients: gradient key mismatch across workers");
        for (auto& [name, acc] : out) {
            auto it = g.find(name);
            if (it == g.end())
                throw std::invalid_argument("average_gradients: missing gradient for " + name);
            if (!it->second.same_shape(acc))
                throw std::invalid_argument("average_gradients: shape mismatch for " + name);
            kern::add(acc.data(), it->second.data(), acc.data(), acc.size());
        }
    }
    const float w = static_cast<float>(per_worker.size());
    for (auto& [_, acc] : out)
        for (size_t i = 0; i < acc.size(); ++i) acc[i] /= w;
    return out;
}

SlicePool load_slice_pool(const std::vector<CasePaths>& manifest) {
    if (manifest.empty()) throw std::invalid_argument("training manifest is empty");
    SlicePool pool;
    for (const auto& c : manifest) {
        Volume vol = normalize(read_bvol_volume(c.volume));
        LabelVolume lab = read_bvol_labels(c.labels);
        SliceFilterResult filtered = slice_and_filter(vol, lab);
        for (auto& s : filtered.slices) {
            if (pool.height == 0) {
                pool.height = s.labels.dim(0);
                pool.width = s.labels.dim(1);
            } else if (pool.height != s.labels.dim(0) || pool.width != s.labels.dim(1)) {
                throw std::invalid_argument("slice pool: mixed slice sizes across manifest");
            }
            pool.slices.push_back(std::move(s));
        }
    }
    if (pool.slices.empty())
        throw std::invalid_argument("empty data: no tumor slices after filtering");
    return pool;
}

WorkerResult run_worker(Network<float>& net, const SlicePool& pool, const TrainConfig& cfg,
                        int64_t iteration, int worker_index) {
    const int B = cfg.batch_per_worker;
    const int H = pool.height, W = pool.width;
    Rng rng = Rng::derive(cfg.seed + static_cast<uint64_t>(worker_index),
                          static_cast<uint64_t>(iteration));

    Tensor<float> batch({B, 4, H, W});
    Tensor<uint8_t> labels({B, H, W});
    const size_t plane = static_cast<size_t>(H) * W;
    for (int b = 0; b < B; ++b) {
        const SlicePair& s = pool.slices[rng.uniform_index(pool.slices.size())];
        std::copy(s.image.data(), s.image.data() + 4 * plane,
                  batch.data() + static_cast<size_t>(b) * 4 * plane);
        std::copy(s.labels.data(), s.labels.data() + plane,
                  labels.data() + static_cast<size_t>(b) * plane);
    }

    WorkerResult res;
    Tape<float> tape;
    Value x = tape.constant(std::move(batch), "batch");
    Value logits = net.forward(tape, x, /*train=*/true, &res.bn_updates);
    LossOutcome lo = build_loss(tape, cfg.loss, logits, labels, cfg.loss_params);
    res.loss = tape.val(lo.loss)[0];
    res.fully_filtered = lo.bootstrap.fully_filtered && cfg.loss == LossKind::Bootstrap;
    if (!std::isfinite(res.loss))
        throw std::runtime_error("NaN loss at iteration " + std::to_string(iteration) + " (worker " +
                                 std::to_string(worker_index) + ")");
    tape.backward(lo.loss, res.grads);
    return res;
}

Checkpoint snapshot(const Network<float>& net, const GradMap& ema, const AdamState& adam,
                    uint64_t iteration, const std::string& config_text) {
    Checkpoint ck;
    for (const auto& [name, p] : net.params()) ck.params.emplace(name, p.value);
    ck.ema = ema;
    ck.adam_m = adam.m;
    ck.adam_v = adam.v;
    ck.adam_t = adam.t;
    ck.iteration = iteration;
    ck.config_text = config_text;
    return ck;
}

void restore(Network<float>& net, GradMap& ema, AdamState& adam, const Checkpoint& ck) {
    for (auto& [name, p] : net.params()) {
        auto it = ck.params.find(name);
        if (it == ck.params.end())
            throw std::runtime_error("checkpoint missing parameter: " + name);
        if (!it->second.same_shape(p.value))
            throw std::runtime_error("checkpoint shape mismatch for " + name);
        p.value = it->second;
    }
    if (ck.params.size() != net.params().count())
        throw std::runtime_error("checkpoint has extra parameters for this architecture");
    ema = ck.ema;
    adam.m = ck.adam_m;
    adam.v = ck.adam_v;
    adam.t = ck.adam_t;
}

TrainResult train(const TrainConfig& cfg, const std::vector<CasePaths>& manifest,
                  const std::string& resolved_config_text, const std::string& out_dir,
                  const std::string& resume_from) {
    if (cfg.workers < 1) throw std::invalid_argument("train: workers must be >= 1");
    if (cfg.batch_per_worker < 1) throw std::invalid_argument("train: batch_per_worker must be >= 1");
    if (cfg.max_iterations < 0) throw std::invalid_argument("train: max_iterations must be >= 0");

    SlicePool pool = load_slice_pool(manifest);
    if (pool.height % (1 << cfg.net.depth) != 0 || pool.width % (1 << cfg.net.depth) != 0)
        throw std::invalid_argument("train: slice extent not divisible by 2^depth");

    Network<float> net = Network<float>::build(cfg.net, cfg.seed);
    AdamState adam;
    GradMap ema;
    for (const auto& [name, p] : net.params())
        if (p.learnable) ema.emplace(name, p.value);

    int64_t start_iter = 0;
    if (!resume_from.empty()) {
        Checkpoint ck = read_checkpoint(resume_from);
        restore(net, ema, adam, ck);
        start_iter = static_cast<int64_t>(ck.iteration);
    }

    std::filesystem::create_directories(out_dir);
    TrainResult result;
    const std::string csv_path = out_dir + "/loss.csv";
    const bool append = !resume_from.empty() && std::filesystem::exists(csv_path);
    std::ofstream loss_csv(csv_path, append ? std::ios::app : std::ios::trunc);
    if (!loss_csv) throw std::runtime_error("train: cannot write loss history in " + out_dir);
    if (!append) loss_csv << "iteration,loss,lr\n";

    for (int64_t iter = start_iter; iter < cfg.max_iterations; ++iter) {
        std::vector<WorkerResult> results(static_cast<size_t>(cfg.workers));
        if (cfg.workers == 1) {
            results[0] = run_worker(net, pool, cfg, iter, 0);
        } else {
            std::vector<std::thread> threads;
            threads.reserve(static_cast<size_t>(cfg.workers));
            std::vector<std::exception_ptr> errors(static_cast<size_t>(cfg.workers));
            for (int w = 0; w < cfg.workers; ++w)
                threads.emplace_back([&, w]() {
                    try {
                        results[static_cast<size_t>(w)] = run_worker(net, pool, cfg, iter, w);
                    } catch (...) {
                        errors[static_cast<size_t>(w)] = std::current_exception();
                    }
                });
            for (auto& t : threads) t.join();
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);
        }

        // running stats from worker 0 only
        for (const auto& u : results[0].bn_updates) apply_bn_update(u);

        double loss_sum = 0;
        bool all_filtered = true;
        std::vector<GradMap> grads;
        grads.reserve(results.size());
        for (auto& r : results) {
            loss_sum += r.loss;
            all_filtered = all_filtered && r.fully_filtered;
            grads.push_back(std::move(r.grads));
        }
        const double loss = loss_sum / cfg.workers;
        const double lr = lr_at(iter, cfg);

        if (!all_filtered) {
            GradMap mean = average_gradients(grads);
            adam_step(net.params(), mean, adam, static_cast<float>(lr));
            ema_update(ema, net.params(), static_cast<float>(cfg.ema_decay));
        } else {
            ++result.skipped_steps;
        }

        result.history.push_back({iter, loss, lr});
        loss_csv << iter << ',' << loss << ',' << lr << '\n';

        if (cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 &&
            iter + 1 < cfg.max_iterations) {
            write_checkpoint(out_dir + "/checkpoint_" + std::to_string(iter + 1) + ".hnck",
                             snapshot(net, ema, adam, static_cast<uint64_t>(iter + 1),
                                      resolved_config_text));
        }
    }

    result.final_checkpoint = out_dir + "/checkpoint_final.hnck";
    write_checkpoint(result.final_checkpoint,
                     snapshot(net, ema, adam, static_cast<uint64_t>(cfg.max_iterations),
                              resolved_config_text));
    return result;
}

}  // namespace hdseg
