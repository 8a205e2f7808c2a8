#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "hdseg/tensor.hpp"

namespace hdseg {

// Trainer snapshot: parameters (including batch-norm running stats), EMA
// shadows and Adam moments for the learnable subset, counters, and the fully
// resolved config text the run was launched with.
struct Checkpoint {
    std::map<std::string, Tensor<float>> params;
    std::map<std::string, Tensor<float>> ema;
    std::map<std::string, Tensor<float>> adam_m;
    std::map<std::string, Tensor<float>> adam_v;
    uint64_t iteration = 0;
    uint64_t adam_t = 0;
    std::string config_text;
};

// Container: magic "HNCK1\0", u32 record count, then per record
//   u32 name length, name bytes, u8 dtype (0=f32, 1=u8, 2=u64), u8 rank,
//   rank x u32 dims, payload
// little-endian throughout. Round-trips bit-exactly.
void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace hdseg
