#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hdseg/checkpoint.hpp"
#include "hdseg/losses.hpp"
#include "hdseg/net.hpp"
#include "hdseg/phantom.hpp"
#include "hdseg/tensor.hpp"

namespace hdseg {

struct TrainConfig {
    double base_lr = 5e-5;
    double lr_decay = 0.95;
    int lr_decay_every = 10000;
    double ema_decay = 0.9999;
    int batch_per_worker = 8;
    int workers = 1;
    int max_iterations = 2000;
    LossKind loss = LossKind::Hdice;
    NetConfig net;
    LossParams<float> loss_params;
    uint64_t seed = 1;
    int checkpoint_every = 0;  // 0: final checkpoint only
};

// Staircase schedule: base_lr * decay^floor(iter / every).
double lr_at(int64_t iter, const TrainConfig& cfg);

using GradMap = std::map<std::string, Tensor<float>>;

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    GradMap m, v;
    uint64_t t = 0;
    AdamConfig cfg;
};

// Bias-corrected Adam over the learnable parameters named in grads.
void adam_step(ParamStore<float>& params, const GradMap& grads, AdamState& state, float lr);

// shadow <- decay*shadow + (1-decay)*params, learnable parameters only
void ema_update(GradMap& shadow, const ParamStore<float>& params, float decay);

// Arithmetic mean per parameter, reduced in worker-index order.
GradMap average_gradients(const std::vector<GradMap>& per_worker);

struct LossPoint {
    int64_t iteration = 0;
    double loss = 0;
    double lr = 0;
};

struct TrainResult {
    std::vector<LossPoint> history;
    std::string final_checkpoint;
    int skipped_steps = 0;  // fully-filtered bootstrap batches
};

// In-memory training set: the filtered slice pool of every manifest case.
struct SlicePool {
    std::vector<SlicePair> slices;
    int height = 0, width = 0;
};

SlicePool load_slice_pool(const std::vector<CasePaths>& manifest);

// One result per worker for a single iteration, computed on the shared
// parameter snapshot.
struct WorkerResult {
    GradMap grads;
    double loss = 0;
    bool fully_filtered = false;
    BnStaged<float> bn_updates;
};

WorkerResult run_worker(Network<float>& net, const SlicePool& pool, const TrainConfig& cfg,
                        int64_t iteration, int worker_index);

// Full training loop over the worker contract. W=1 runs inline with no
// threads; W>1 spawns one thread per worker per step and reduces in index
// order. Writes loss history CSV ("iteration,loss,lr") and checkpoints under
// out_dir.
TrainResult train(const TrainConfig& cfg, const std::vector<CasePaths>& manifest,
                  const std::string& resolved_config_text, const std::string& out_dir,
                  const std::string& resume_from = "");

Checkpoint snapshot(const Network<float>& net, const GradMap& ema, const AdamState& adam,
                    uint64_t iteration, const std::string& config_text);
void restore(Network<float>& net, GradMap& ema, AdamState& adam, const Checkpoint& ck);

}  // namespace hdseg
