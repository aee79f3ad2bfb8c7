#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "guarddoor/attacks.hpp"
#include "guarddoor/dataset.hpp"
#include "guarddoor/editor.hpp"
#include "guarddoor/guard.hpp"
#include "guarddoor/vae.hpp"

namespace gd {

struct ModelConfig {
    int c1 = 16;
    int c2 = 32;
    int latent_channels = 4;
    bool shared_init = true;
};

// Full declarative run description. Parsing is strict: unknown keys are
// rejected, and serialize(parse(text)) round-trips losslessly.
struct RunConfig {
    std::uint64_t seed = 7;
    std::string out_dir = "runs/default";

    CorpusSpec corpus;
    ModelConfig model;
    VAETrainConfig vae_train;
    VAETrainConfig purifier_train;
    EditorTrainConfig editor_train;
    DenoiserTrainConfig denoiser_train;
    GuardTrainConfig guard;
    EditConfig edit;
    std::vector<AttackSpec> attacks;
    std::vector<BaselineSpec> baselines;

    static RunConfig defaults();
    static RunConfig from_json_text(const std::string& text);
    static RunConfig load(const std::string& path);
    std::string to_json_text() const;
    void save(const std::string& path) const;

    // dotted-path override, e.g. "guard.alpha=0.1" or "corpus.n_train=64"
    void apply_override(const std::string& key_equals_value);

    // stable content hash of the resolved config
    std::uint64_t hash() const;

    // per-module seeds derived from the global seed
    void derive_seeds();
};

}  // namespace gd
