#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "guarddoor/editor.hpp"
#include "guarddoor/vae.hpp"

namespace gd {

// Tagged binary checkpoint: magic "GDCK", format version, model kind, named
// f32 tensor table, config snapshot, trailing content hash (fnv-1a 64).
constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string model_kind;
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::string config_json;  // free-form snapshot, may be "{}"

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    const Tensor& tensor(const std::string& name) const;
    std::vector<std::uint8_t> serialize() const;
};

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t len);

// model <-> checkpoint adapters
Checkpoint checkpoint_from_vae(const VAEParams& vae, const std::string& kind = "vae");
VAEParams vae_from_checkpoint(const Checkpoint& ck);

Checkpoint checkpoint_from_editor(const EditorParams& editor);
EditorParams editor_from_checkpoint(const Checkpoint& ck);

Checkpoint checkpoint_from_denoiser(const DenoiserParams& den);
DenoiserParams denoiser_from_checkpoint(const Checkpoint& ck);

// hash of the on-disk artifact, for provenance records
std::uint64_t checkpoint_file_hash(const std::string& path);

}  // namespace gd
