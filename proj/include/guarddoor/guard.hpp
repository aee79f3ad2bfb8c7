#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "guarddoor/editor.hpp"
#include "guarddoor/vae.hpp"

namespace gd {

struct GuardTrainConfig {
    float alpha = 0.5f;
    float lr = 1e-5f;
    int epochs = 30;
    int batch_size = 1;
    std::string optimizer = "adamw";
    std::uint64_t seed = 3;
    std::string target_kind = "black";  // or "noise"
    bool stop_grad_target = true;
    // fine-tune only the encoder's detector branch; the shared trunk is left
    // untouched so clean-image behaviour is preserved exactly
    bool detector_only = true;
};

// Single target image broadcast over a batch.
struct TargetImage {
    Tensor image;  // (1, 3, H, W)

    static TargetImage make(const std::string& kind, int h, int w, std::uint64_t seed = 0);
    Tensor broadcast(int batch) const;
};

struct GuardLosses {
    double total = 0, utility = 0, backdoor = 0;
};

// Two-term objective on a batch:
//   utility  = || decode(encode(x)) - x ||^2            (pixel space, decoder frozen)
//   backdoor = || encode(trigger(x)) - encode(x_tar) ||^2  (latent space)
//   total    = utility + alpha * backdoor
// Gradients reach the encoder only. `triggered` is h_phi(x), precomputed by
// the frozen trigger VAE.
GuardLosses guard_loss_and_backward(EditorParams& editor, const Tensor& x, const Tensor& triggered,
                                    const TargetImage& tar, float alpha, bool stop_grad_target);

// evaluation-only variant (no tape, no gradients)
GuardLosses guard_loss_eval(const EditorParams& editor, const Tensor& x, const Tensor& triggered,
                            const TargetImage& tar, float alpha);

struct GuardEpochLog {
    int epoch;
    double loss_total, loss_utility, loss_backdoor;
    float lr;
};

std::string guard_log_csv(const std::vector<GuardEpochLog>& log);

// Backdoor injection: fine-tunes the encoder of `editor` in place and
// returns the per-epoch loss log. Decoder and VAE are never touched.
std::vector<GuardEpochLog> inject_backdoor(EditorParams& editor, const VAEParams& vae,
                                           const ImageBatch& dataset, const GuardTrainConfig& cfg,
                                           std::ostream* progress = nullptr);

// owner-facing protection API, one VAE forward pass
ImageBatch protect(const VAEParams& vae, const ImageBatch& x);

}  // namespace gd
