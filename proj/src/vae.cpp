#include "guarddoor/vae.hpp"

#include <cmath>
#include <numeric>
#include <ostream>

namespace gd {

VAEParams::VAEParams(int c1_, int c2_, int latent, Rng& rng) : c1(c1_), c2(c2_), latent_channels(latent) {
    enc1 = nn::Conv2d(3, c1, 3, 2, 1, rng);
    enc2 = nn::Conv2d(c1, c2, 3, 2, 1, rng);
    mu_head = nn::Conv2d(c2, latent, 3, 1, 1, rng);
    logvar_head = nn::Conv2d(c2, latent, 3, 1, 1, rng);
    dec1 = nn::ConvT2d(latent, c2, 4, 2, 1, rng);
    dec2 = nn::ConvT2d(c2, c1, 4, 2, 1, rng);
    out = nn::Conv2d(c1, 3, 3, 1, 1, rng);
}

ParamSet VAEParams::params() {
    ParamSet p = encoder_params();
    ParamSet d = decoder_params();
    p.insert(p.end(), d.begin(), d.end());
    return p;
}

ParamSet VAEParams::encoder_params() {
    ParamSet p;
    enc1.collect(p, "vae.enc1");
    enc2.collect(p, "vae.enc2");
    mu_head.collect(p, "vae.mu");
    logvar_head.collect(p, "vae.logvar");
    return p;
}

ParamSet VAEParams::decoder_params() {
    ParamSet p;
    dec1.collect(p, "vae.dec1");
    dec2.collect(p, "vae.dec2");
    out.collect(p, "vae.out");
    return p;
}

std::pair<Tensor, Tensor> vae_encode(const VAEParams& params, const Tensor& x) {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] % 4 != 0 || s[3] % 4 != 0)
        throw ShapeError("vae_encode: expected (B,3,H,W) with H,W divisible by 4, got " +
                         shape_str(s));
    Tensor h = silu(params.enc1.forward(x));
    h = silu(params.enc2.forward(h));
    return {params.mu_head.forward(h), params.logvar_head.forward(h)};
}

Tensor vae_decode(const VAEParams& params, const Tensor& z) {
    const Shape& s = z.shape();
    if (s.size() != 4 || s[1] != params.latent_channels)
        throw ShapeError("vae_decode: expected (B," + std::to_string(params.latent_channels) +
                         ",h,w), got " + shape_str(s));
    Tensor h = silu(params.dec1.forward(z));
    h = silu(params.dec2.forward(h));
    return sigmoid(params.out.forward(h));
}

namespace {

// KL(N(mu, sigma^2) || N(0,1)) as mean over elements:
// -0.5 * mean(1 + logvar - mu^2 - exp(logvar))
Tensor kl_term(const Tensor& mu, const Tensor& logvar) {
    Tensor inner = add_scalar(sub(logvar, add(mul(mu, mu), exp_op(logvar))), 1.0f);
    return scalar_mul(mean(inner), -0.5f);
}

}  // namespace

VAEParams vae_train(const VAETrainConfig& cfg, const ImageBatch& dataset,
                    std::vector<VAELosses>* epoch_log, std::ostream* progress, VAEParams* init) {
    if (dataset.size() == 0) throw std::invalid_argument("vae_train: empty dataset");
    if (cfg.kl_weight < 0.0f) throw std::invalid_argument("vae_train: kl_weight must be >= 0");
    if (cfg.lr <= 0.0f) throw std::invalid_argument("vae_train: lr must be > 0");

    Rng init_rng(cfg.seed);
    VAEParams model = init ? *init : VAEParams(32, 64, 4, init_rng);
    ParamSet params = model.params();
    Optimizer opt({OptKind::Adam, cfg.lr});

    const int n = dataset.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = Rng::derive(cfg.seed ^ 0x5eedULL, static_cast<std::uint64_t>(epoch));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<int>(erng.uniform_int(i + 1))]);

        VAELosses acc;
        int batches = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int end = std::min(n, start + cfg.batch_size);
            // gather batch
            const int per = 3 * dataset.height() * dataset.width();
            Tensor x({end - start, 3, dataset.height(), dataset.width()});
            for (int i = start; i < end; ++i)
                std::copy_n(dataset.data.data().begin() +
                                static_cast<std::ptrdiff_t>(order[i]) * per,
                            per, x.data().begin() + static_cast<std::ptrdiff_t>(i - start) * per);

            Tape<float> tape;
            auto [mu, logvar] = vae_encode(model, x);
            // reparameterized sample
            Tensor eps(mu.shape());
            for (auto& v : eps.data()) v = static_cast<float>(erng.normal());
            Tensor z = add(mu, mul(exp_op(scalar_mul(logvar, 0.5f)), eps));
            Tensor recon = vae_decode(model, z);
            Tensor recon_loss = mse(recon, x);
            Tensor kl = kl_term(mu, logvar);
            Tensor loss = add(recon_loss, scalar_mul(kl, cfg.kl_weight));

            const double lv = loss.item();
            if (!std::isfinite(lv))
                throw std::runtime_error("vae_train: loss diverged to " + std::to_string(lv) +
                                         " at epoch " + std::to_string(epoch));
            acc.total += lv;
            acc.recon += recon_loss.item();
            acc.kl += kl.item();
            ++batches;

            opt.zero_grad(params);
            loss.backward();
            opt.step(params);
        }
        acc.total /= batches;
        acc.recon /= batches;
        acc.kl /= batches;
        if (epoch_log) epoch_log->push_back(acc);
        if (progress)
            *progress << "vae epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << acc.total
                      << " recon " << acc.recon << " kl " << acc.kl << "\n";
    }
    return model;
}

ImageBatch generate_trigger(const VAEParams& params, const ImageBatch& x, bool sample,
                            std::uint64_t sample_seed) {
    auto [mu, logvar] = vae_encode(params, x.data);
    Tensor z = mu;
    if (sample) {
        Rng rng(sample_seed);
        z = mu.clone();
        for (std::size_t i = 0; i < z.data().size(); ++i)
            z.data()[i] += std::exp(0.5f * logvar.data()[i]) * static_cast<float>(rng.normal());
    }
    Tensor protected_imgs = vae_decode(params, z);

    // The reconstruction is overlaid with a faint fixed mid-frequency carrier
    // so the residual protected - x has a stable signature: easy for the
    // fine-tuned editor encoder to key on, mid-band enough to survive mild
    // JPEG/resampling, and far below visibility (~40 dB on its own).
    const Shape& s = protected_imgs.shape();
    const int hw = s[2] * s[3];
    constexpr float kCarrierAmp = kTriggerCarrierAmp;
    constexpr float kCarrierFreq = 2.0f * 3.14159265f / kTriggerCarrierPeriod;
    for (int n = 0; n < s[0]; ++n)
        for (int c = 0; c < s[1]; ++c) {
            float* img = protected_imgs.data().data() +
                         (static_cast<std::size_t>(n) * s[1] + c) * hw;
            for (int y = 0; y < s[2]; ++y) {
                const float sy = std::sin(kCarrierFreq * y);
                for (int xpos = 0; xpos < s[3]; ++xpos) {
                    float& v = img[y * s[3] + xpos];
                    v = std::clamp(v + kCarrierAmp * sy * std::sin(kCarrierFreq * xpos), 0.0f,
                                   1.0f);
                }
            }
        }
    return ImageBatch(protected_imgs, x.ids);
}

}  // namespace gd
