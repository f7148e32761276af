#pragma once

#include <string>
#include <utility>
#include <vector>

#include "psagan/model.hpp"
#include "psagan/tensor.hpp"

namespace psagan {

// On-disk snapshot of every parameter and persistent buffer. The format is
// pinned: magic "PSAGANCKPT1\n", u32 version, u32 config length + config
// echo, u32 growth stage, f32 alpha, u64 entry count, then per entry
// {u32 name length, name, u32 ndim, u64 dims..., u64 byte offset}, then
// u64 payload byte length and the raw little-endian f32 payload. Round-trips
// are bit-exact.
struct Checkpoint {
    std::string config_echo;  // resolved flat key=value text
    std::int64_t growth_stage = 1;
    float alpha = 1.0f;
    std::vector<std::pair<std::string, Tensor>> entries;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Entries = generator params+buffers then discriminator params+buffers, in
// registry order. Both stacks must agree on stage and alpha.
Checkpoint snapshot(GeneratorStack& g, DiscriminatorStack& d, const std::string& config_echo);
// Grows freshly constructed stacks to the checkpoint's stage and copies every
// entry by name; missing or extra names raise ArtifactError.
void restore(const Checkpoint& ckpt, GeneratorStack& g, DiscriminatorStack& d);

// Same container for any named-tensor collection (e.g. the embedding network
// used by the score pipeline); growth_stage is stored as 0.
Checkpoint snapshot_named(const std::vector<NamedTensor>& params,
                          const std::vector<NamedTensor>& buffers,
                          const std::string& config_echo);
void restore_named(const Checkpoint& ckpt, const std::vector<NamedTensor>& params,
                   const std::vector<NamedTensor>& buffers);

}  // namespace psagan
