#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "guarddoor/dataset.hpp"
#include "guarddoor/nn.hpp"

namespace gd {

// Small convolutional VAE. Its reconstruction output is the protective
// trigger carrier: protected = decode(encode_mean(x)).
struct VAEParams {
    nn::Conv2d enc1, enc2;        // 3 -> c1 -> c2, two x2 downsamples
    nn::Conv2d mu_head, logvar_head;  // c2 -> latent channels
    nn::ConvT2d dec1, dec2;       // mirror, x2 upsamples
    nn::Conv2d out;               // c1 -> 3, sigmoid

    int c1 = 32, c2 = 64, latent_channels = 4;

    VAEParams() = default;
    VAEParams(int c1_, int c2_, int latent, Rng& rng);

    ParamSet params();
    ParamSet encoder_params();
    ParamSet decoder_params();
};

struct VAETrainConfig {
    int epochs = 30;
    int batch_size = 16;
    float lr = 1e-3f;
    float kl_weight = 1e-3f;  // beta
    std::uint64_t seed = 0;
};

// encoder: (B,3,H,W) -> mu, logvar of shape (B, latent, H/4, W/4)
std::pair<Tensor, Tensor> vae_encode(const VAEParams& params, const Tensor& x);

// decoder: (B, latent, H/4, W/4) -> (B,3,H,W) in [0,1]
Tensor vae_decode(const VAEParams& params, const Tensor& z);

// MSE reconstruction + beta * KL(N(mu, sigma^2) || N(0,1)), both mean-per-element
struct VAELosses {
    double total = 0, recon = 0, kl = 0;
};

VAEParams vae_train(const VAETrainConfig& cfg, const ImageBatch& dataset,
                    std::vector<VAELosses>* epoch_log = nullptr, std::ostream* progress = nullptr,
                    VAEParams* init = nullptr);

// Fixed mid-frequency carrier overlaid on protected images. Period 8 lines
// up with JPEG's 8x8 blocks (a low DCT basis that survives quantisation) and
// stays representable after a 2x resample; the amplitude alone is ~40 dB.
// The editor's detector branch is initialised with filters matched to this
// pattern.
inline constexpr float kTriggerCarrierAmp = 0.02f;
inline constexpr float kTriggerCarrierPeriod = 8.0f;

// Protected image from the posterior mean (no sampling); the residual
// protected - x is the trigger pattern.
ImageBatch generate_trigger(const VAEParams& params, const ImageBatch& x, bool sample = false,
                            std::uint64_t sample_seed = 0);

}  // namespace gd
