#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "guarddoor/dataset.hpp"
#include "guarddoor/nn.hpp"
#include "guarddoor/vae.hpp"

namespace gd {

// Surrogate image-to-image editor: deterministic encoder, frozen pixel
// decoder, and a small latent denoiser for SDEdit-style edits.
struct EditorParams {
    nn::Conv2d e1, e2, ehead;   // encoder trunk, 3 -> c1 -> c2 -> latent, x4 downsample
    // artifact-detector side branch: 3 -> 8 -> 8 -> 1 gate map (sigmoid), whose
    // response shifts the latent through a learnable 1x1 direction. Zero at
    // init, so encode() starts identical to the trunk; fine-tuning can then
    // steer trigger-carrying inputs without touching clean encodings.
    nn::Conv2d det1, det2, det3;
    nn::Conv2d vshift;          // det features ++ trunk features -> latent shift
    nn::ConvT2d d1, d2;         // decoder mirror
    nn::Conv2d dout;            // c1 -> 3, sigmoid
    bool frozen_decoder = true;

    int c1 = 32, c2 = 64, latent_channels = 4;

    EditorParams() = default;
    EditorParams(int c1_, int c2_, int latent, Rng& rng);

    void init_detector(Rng& rng);

    // copy weights from a VAE (mu path), the shared_init regime
    static EditorParams from_vae(const VAEParams& vae);

    Tensor encode(const Tensor& x) const;  // (B,3,H,W) -> (B, latent, H/4, W/4)
    Tensor decode(const Tensor& z) const;
    Tensor gate(const Tensor& x) const;    // detector response, (B,1,H/4,W/4) in (0,1)
    Tensor det_features(const Tensor& x) const;
    Tensor encode_trunk(const Tensor& x) const;  // encoder without the detector correction
    Tensor trunk_features(const Tensor& x) const;
    Tensor correction(const Tensor& x) const;    // gated detector correction

    ParamSet encoder_params();
    ParamSet detector_params();
    ParamSet decoder_params();
    ParamSet params();
};

struct EditorTrainConfig {
    int epochs = 30;
    int batch_size = 16;
    float lr = 1e-3f;
    std::uint64_t seed = 1;
    bool shared_init = true;
    // reference image the triggered inputs are steered toward during
    // sensitization; kept in sync with the guard target by the pipeline
    std::string target_kind = "black";
    std::uint64_t target_seed = 3;
};

EditorParams editor_pretrain(const ImageBatch& dataset, const EditorTrainConfig& cfg,
                             const VAEParams* shared_init_from = nullptr,
                             std::vector<double>* epoch_log = nullptr,
                             std::ostream* progress = nullptr,
                             const VAEParams* purifier = nullptr);

// Latent denoiser with a linear beta schedule and sinusoidal timestep planes.
struct DenoiserParams {
    nn::Conv2d c1, c2, c3;
    int T = 100;
    int latent_channels = 4;
    int time_channels = 4;
    std::vector<float> betas;
    std::vector<float> alpha_bars;

    DenoiserParams() = default;
    DenoiserParams(int latent, int hidden, int T_, Rng& rng);

    void build_schedule();  // linear beta in [1e-4, 0.02]

    // predicted noise for latents z_t at timestep t (1-based, t in [1, T])
    Tensor predict_noise(const Tensor& z_t, int t) const;

    ParamSet params();
};

struct DenoiserTrainConfig {
    int T = 100;
    int epochs = 30;
    int batch_size = 16;
    float lr = 1e-3f;
    int hidden = 32;
    std::uint64_t seed = 2;
    // the guard's reference image is included in the latent training set so
    // redirected latents are a valid point on the denoiser's manifold
    std::string target_kind = "black";
    std::uint64_t target_seed = 3;
};

DenoiserParams denoiser_train(const EditorParams& editor, const ImageBatch& dataset,
                              const DenoiserTrainConfig& cfg,
                              std::vector<double>* epoch_log = nullptr,
                              std::ostream* progress = nullptr);

struct EditConfig {
    float strength = 0.3f;  // fraction of the noise schedule applied
    int num_steps = 0;      // 0 = every schedule step down from ceil(strength*T)
    std::uint64_t seed = 0;
};

// SDEdit: z = encode(x); noise-inject at level ceil(strength*T); ancestral
// denoise back to z0; decode. Deterministic given (params, x, cfg).
ImageBatch edit(const EditorParams& editor, const DenoiserParams& denoiser, const ImageBatch& x,
                const EditConfig& cfg);

}  // namespace gd
