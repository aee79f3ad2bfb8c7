#include "guarddoor/guard.hpp"

#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

namespace gd {

TargetImage TargetImage::make(const std::string& kind, int h, int w, std::uint64_t seed) {
    TargetImage t;
    t.image = Tensor({1, 3, h, w});
    if (kind == "black") {
        // all zeros
    } else if (kind == "noise") {
        Rng rng(seed ^ 0x7a59ULL);
        for (auto& v : t.image.data()) v = static_cast<float>(rng.uniform());
    } else {
        throw std::invalid_argument("unknown target_kind '" + kind + "'");
    }
    return t;
}

Tensor TargetImage::broadcast(int batch) const {
    const Shape& s = image.shape();
    Tensor out({batch, s[1], s[2], s[3]});
    const std::size_t per = image.data().size();
    for (int n = 0; n < batch; ++n)
        std::copy(image.data().begin(), image.data().end(), out.data().begin() + n * per);
    return out;
}

namespace {

// replicate a (1, C, H, W) latent across a batch
Tensor tile_latent(const Tensor& z, int batch) {
    const Shape& s = z.shape();
    Tensor out({batch, s[1], s[2], s[3]});
    const std::size_t per = z.data().size();
    for (int n = 0; n < batch; ++n)
        std::copy(z.data().begin(), z.data().end(), out.data().begin() + n * per);
    return out;
}

GuardLosses guard_terms(EditorParams& editor, const Tensor& x, const Tensor& triggered,
                        const TargetImage& tar, float alpha, bool stop_grad_target,
                        bool do_backward, const Tensor* z_tar_fixed = nullptr) {
    if (x.shape() != triggered.shape())
        throw ShapeError("guard_loss: clean batch " + shape_str(x.shape()) +
                         " vs triggered batch " + shape_str(triggered.shape()));
    ParamSet enc = editor.encoder_params();
    ParamSet dec = editor.decoder_params();
    nn::set_requires_grad(enc, do_backward);
    nn::set_requires_grad(dec, false);

    Tape<float> tape;
    Tensor utility = mse(editor.decode(editor.encode(x)), x);
    Tensor z_trig = editor.encode(triggered);
    Tensor z_tar;
    if (z_tar_fixed) {
        // target encoding anchored to the pre-injection encoder; keeps the
        // objective from being satisfiable by shrinking the latent space
        z_tar = tile_latent(*z_tar_fixed, x.shape()[0]);
    } else {
        Tensor tar_batch = tar.broadcast(x.shape()[0]);
        z_tar = stop_grad_target ? editor.encode(tar_batch).detach() : editor.encode(tar_batch);
    }
    Tensor backdoor = mse(z_trig, z_tar);
    Tensor total = add(utility, scalar_mul(backdoor, alpha));

    GuardLosses losses{total.item(), utility.item(), backdoor.item()};
    if (!std::isfinite(losses.total))
        throw std::runtime_error("guard_loss: non-finite loss");
    if (do_backward) total.backward();
    return losses;
}

}  // namespace

GuardLosses guard_loss_and_backward(EditorParams& editor, const Tensor& x, const Tensor& triggered,
                                    const TargetImage& tar, float alpha, bool stop_grad_target) {
    return guard_terms(editor, x, triggered, tar, alpha, stop_grad_target, true);
}

GuardLosses guard_loss_eval(const EditorParams& editor, const Tensor& x, const Tensor& triggered,
                            const TargetImage& tar, float alpha) {
    return guard_terms(const_cast<EditorParams&>(editor), x, triggered, tar, alpha, true, false);
}

std::string guard_log_csv(const std::vector<GuardEpochLog>& log) {
    std::ostringstream os;
    os << "epoch,loss_total,loss_utility,loss_backdoor,lr\n";
    for (const auto& e : log)
        os << e.epoch << "," << e.loss_total << "," << e.loss_utility << "," << e.loss_backdoor
           << "," << e.lr << "\n";
    return os.str();
}

std::vector<GuardEpochLog> inject_backdoor(EditorParams& editor, const VAEParams& vae,
                                           const ImageBatch& dataset, const GuardTrainConfig& cfg,
                                           std::ostream* progress) {
    if (dataset.size() == 0) throw std::invalid_argument("inject_backdoor: empty dataset");
    if (!(cfg.alpha > 0.0f)) throw std::invalid_argument("inject_backdoor: alpha must be > 0");
    if (cfg.epochs < 1) throw std::invalid_argument("inject_backdoor: epochs must be >= 1");

    // h_phi is frozen, so trigger-embedded counterparts are cached once
    ImageBatch triggered = generate_trigger(vae, dataset);

    TargetImage tar = TargetImage::make(cfg.target_kind, dataset.height(), dataset.width(),
                                        cfg.seed);

    // with stop_grad_target, the target latent is the clean encoder's view of
    // x_tar, frozen for the whole fine-tune
    Tensor z_tar_fixed;
    if (cfg.stop_grad_target) z_tar_fixed = editor.encode(tar.broadcast(1)).detach();

    OptimizerConfig ocfg;
    ocfg.kind = opt_kind_from_string(cfg.optimizer);
    ocfg.lr = cfg.lr;
    ocfg.weight_decay = (ocfg.kind == OptKind::AdamW) ? 0.01f : 0.0f;
    Optimizer opt(ocfg);

    // parameters actually stepped; gradients still flow through the whole
    // encoder, but with detector_only the shared trunk never moves
    ParamSet enc = cfg.detector_only ? editor.detector_params() : editor.encoder_params();
    ParamSet enc_all = editor.encoder_params();
    const int n = dataset.size();
    const int per = 3 * dataset.height() * dataset.width();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    std::vector<GuardEpochLog> log;
    // last good state, restored if the loss diverges
    std::vector<std::vector<float>> snapshot;
    for (auto& [name, p] : enc) snapshot.push_back(p.data());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = Rng::derive(cfg.seed ^ 0x9da2dULL, static_cast<std::uint64_t>(epoch));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<int>(erng.uniform_int(i + 1))]);
        GuardLosses acc;
        int batches = 0;
        try {
            for (int start = 0; start < n; start += cfg.batch_size) {
                const int end = std::min(n, start + cfg.batch_size);
                Tensor x({end - start, 3, dataset.height(), dataset.width()});
                Tensor xt({end - start, 3, dataset.height(), dataset.width()});
                for (int i = start; i < end; ++i) {
                    std::copy_n(dataset.data.data().begin() +
                                    static_cast<std::ptrdiff_t>(order[i]) * per,
                                per, x.data().begin() + static_cast<std::ptrdiff_t>(i - start) * per);
                    std::copy_n(triggered.data.data().begin() +
                                    static_cast<std::ptrdiff_t>(order[i]) * per,
                                per,
                                xt.data().begin() + static_cast<std::ptrdiff_t>(i - start) * per);
                }
                opt.zero_grad(enc_all);
                GuardLosses l = guard_terms(editor, x, xt, tar, cfg.alpha, cfg.stop_grad_target,
                                            true, cfg.stop_grad_target ? &z_tar_fixed : nullptr);
                opt.step(enc);
                acc.total += l.total;
                acc.utility += l.utility;
                acc.backdoor += l.backdoor;
                ++batches;
            }
        } catch (const std::runtime_error&) {
            for (std::size_t i = 0; i < enc.size(); ++i) enc[i].second.data() = snapshot[i];
            throw std::runtime_error("inject_backdoor: loss diverged at epoch " +
                                     std::to_string(epoch) + "; last good parameters restored");
        }
        acc.total /= batches;
        acc.utility /= batches;
        acc.backdoor /= batches;
        log.push_back({epoch + 1, acc.total, acc.utility, acc.backdoor, cfg.lr});
        for (std::size_t i = 0; i < enc.size(); ++i) snapshot[i] = enc[i].second.data();
        if (progress)
            *progress << "guarddoor epoch " << epoch + 1 << "/" << cfg.epochs << " total "
                      << acc.total << " utility " << acc.utility << " backdoor " << acc.backdoor
                      << "\n";
    }
    return log;
}

ImageBatch protect(const VAEParams& vae, const ImageBatch& x) { return generate_trigger(vae, x); }

}  // namespace gd
