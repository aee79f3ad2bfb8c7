#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "guarddoor/editor.hpp"
#include "guarddoor/vae.hpp"

namespace gd {

// Declarative attack description; params fully determine the result given a seed.
struct AttackSpec {
    std::string kind;  // gaussian_noise | gaussian_blur | jpeg | resample | recon_purify | impress
    std::map<std::string, double> params;
    std::uint64_t seed = 0;

    double param(const std::string& name, double fallback) const {
        auto it = params.find(name);
        return it == params.end() ? fallback : it->second;
    }
    void validate() const;
};

struct BaselineSpec {
    std::string kind = "pgd_encoder";  // or pgd_encoder_eot
    float epsilon = 16.0f / 255.0f;
    int steps = 100;
    float step_size = 1.0f / 255.0f;
    int eot_samples = 4;
    float eot_blur_sigma = 1.0f;
    std::uint64_t seed = 0;
};

Tensor gaussian_noise(const Tensor& x, double sigma, std::uint64_t seed);
Tensor gaussian_blur(const Tensor& x, double sigma);

// Distortion-only JPEG round trip: BT.601 full-range YCbCr, per 8x8 block
// DCT-II, Annex-K quantization tables scaled by the standard quality law,
// inverse transform. No chroma subsampling, no entropy coding.
Tensor jpeg_roundtrip(const Tensor& x, int quality);

// bilinear downscale by an integer factor, then upscale back
Tensor resample(const Tensor& x, int factor);

// purification through an independently trained reconstruction VAE
Tensor recon_purify(const VAEParams& purifier, const Tensor& x);

// IMPRESS-style purification: PGD within an L-inf budget minimizing the
// reconstruction-consistency loss ||recon(x') - x'||^2 against a public
// reconstruction model. Per-step losses returned when requested.
Tensor impress_purify(const VAEParams& vae_pub, const Tensor& x, double budget, int steps,
                      double lr, std::vector<double>* step_losses = nullptr);

// Context handing attacks the models they may query.
struct AttackContext {
    const VAEParams* vae_pub = nullptr;    // IMPRESS query target (the trigger VAE)
    const VAEParams* purifier = nullptr;   // independent reconstruction VAE
};

Tensor apply_attack(const AttackSpec& spec, const Tensor& x, const AttackContext& ctx);
Tensor apply_attack_pipeline(const std::vector<AttackSpec>& specs, const Tensor& x,
                             const AttackContext& ctx);

// PhotoGuard-style encoder PGD: minimize ||f(x+d) - f(x_tar)||^2 under an
// L-inf bound; the EOT variant averages gradients over Gaussian-blurred copies.
Tensor pgd_encoder_baseline(const EditorParams& editor, const Tensor& x, const BaselineSpec& spec,
                            const Tensor& x_tar, std::vector<double>* step_losses = nullptr);

}  // namespace gd
