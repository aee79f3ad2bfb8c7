#include "guarddoor/editor.hpp"

#include <cmath>
#include <numeric>
#include <ostream>

#include "guarddoor/attacks.hpp"
#include "guarddoor/guard.hpp"

namespace gd {

EditorParams::EditorParams(int c1_, int c2_, int latent, Rng& rng)
    : c1(c1_), c2(c2_), latent_channels(latent) {
    e1 = nn::Conv2d(3, c1, 3, 2, 1, rng);
    e2 = nn::Conv2d(c1, c2, 3, 2, 1, rng);
    ehead = nn::Conv2d(c2, latent, 3, 1, 1, rng);
    init_detector(rng);
    d1 = nn::ConvT2d(latent, c2, 4, 2, 1, rng);
    d2 = nn::ConvT2d(c2, c1, 4, 2, 1, rng);
    dout = nn::Conv2d(c1, 3, 3, 1, 1, rng);
}

void EditorParams::init_detector(Rng& rng) {
    // 5x5 kernels so the receptive field spans the trigger carrier's period
    det1 = nn::Conv2d(3, 8, 5, 2, 2, rng);
    det2 = nn::Conv2d(8, 32, 5, 2, 2, rng);
    det3 = nn::Conv2d(32, 1, 3, 1, 1, rng);
    vshift = nn::Conv2d(32 + c2, latent_channels, 3, 1, 1, rng);
    // zero displacement at init: encode() equals the trunk exactly
    for (auto& v : vshift.w.data()) v = 0.0f;
    for (auto& v : vshift.b.data()) v = 0.0f;

    // Quadrature matched-filter init for the first four det1 filters: a
    // zero-mean oscillation gives no usable gradient to randomly initialised
    // filters (the net settles into the constant-output saddle), but filters
    // already aligned with the carrier's four phase combinations let the
    // squared activation compute its envelope from step one.
    {
        const int K = 5, C = 3;
        const double f = 2.0 * 3.14159265358979 / kTriggerCarrierPeriod;
        auto fy = [&](int o, double t) { return (o < 2) ? std::sin(f * t) : std::cos(f * t); };
        auto fx = [&](int o, double t) { return (o % 2 == 0) ? std::sin(f * t) : std::cos(f * t); };
        auto& w = det1.w.data();
        for (int o = 0; o < 4; ++o)
            for (int c = 0; c < C; ++c)
                for (int ky = 0; ky < K; ++ky)
                    for (int kx = 0; kx < K; ++kx)
                        w[((static_cast<std::size_t>(o) * C + c) * K + ky) * K + kx] =
                            static_cast<float>(2.0 / 3.0 * fy(o, ky - K / 2) * fx(o, kx - K / 2));
    }
}

namespace {

nn::Conv2d clone_conv(const nn::Conv2d& src) {
    nn::Conv2d dst;
    dst.w = src.w.clone();
    dst.b = src.b.clone();
    dst.stride = src.stride;
    dst.pad = src.pad;
    return dst;
}

nn::ConvT2d clone_convt(const nn::ConvT2d& src) {
    nn::ConvT2d dst;
    dst.w = src.w.clone();
    dst.b = src.b.clone();
    dst.stride = src.stride;
    dst.pad = src.pad;
    return dst;
}

}  // namespace

EditorParams EditorParams::from_vae(const VAEParams& vae) {
    EditorParams ed;
    ed.c1 = vae.c1;
    ed.c2 = vae.c2;
    ed.latent_channels = vae.latent_channels;
    ed.e1 = clone_conv(vae.enc1);
    ed.e2 = clone_conv(vae.enc2);
    ed.ehead = clone_conv(vae.mu_head);
    ed.d1 = clone_convt(vae.dec1);
    ed.d2 = clone_convt(vae.dec2);
    ed.dout = clone_conv(vae.out);
    Rng det_rng(0xde7ec7ULL);
    ed.init_detector(det_rng);
    return ed;
}

Tensor EditorParams::encode(const Tensor& x) const {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] % 4 != 0 || s[3] % 4 != 0)
        throw ShapeError("editor encode: expected (B,3,H,W) with H,W divisible by 4, got " +
                         shape_str(s));
    return add(encode_trunk(x), correction(x));
}

Tensor EditorParams::trunk_features(const Tensor& x) const {
    Tensor h = silu(e1.forward(x));
    return silu(e2.forward(h));
}

Tensor EditorParams::encode_trunk(const Tensor& x) const {
    return ehead.forward(trunk_features(x));
}

// Gated content-aware latent correction. The gate is rectified at 0.5 so the
// correction is exactly zero wherever the detector stays below threshold:
// clean inputs are untouched and the reconstruction objective gains nothing
// from rescaling the latent space to drown out a leak. The correction head
// sees the (detached) trunk features, so the displacement it must learn —
// steering a detected input's encoding to a fixed reference — is exactly
// representable as "cancel the trunk head, emit the reference" for any input
// the gate fires on.
Tensor EditorParams::correction(const Tensor& x) const {
    Tensor f = det_features(x);
    Tensor g = scalar_mul(relu(add_scalar(sigmoid(det3.forward(f)), -0.5f)), 2.0f);
    Tensor gtile = g;
    for (int c = 1; c < latent_channels; ++c) gtile = concat(gtile, g);
    return mul(vshift.forward(concat(f, trunk_features(x).detach())), gtile);
}

// squaring the first det layer makes the branch phase-invariant: quadrature
// responses a*sin, a*cos turn into an a^2 envelope
Tensor EditorParams::det_features(const Tensor& x) const {
    Tensor a = det1.forward(x);
    return silu(det2.forward(mul(a, a)));
}

Tensor EditorParams::gate(const Tensor& x) const {
    return sigmoid(det3.forward(det_features(x)));
}

Tensor EditorParams::decode(const Tensor& z) const {
    const Shape& s = z.shape();
    if (s.size() != 4 || s[1] != latent_channels)
        throw ShapeError("editor decode: expected (B," + std::to_string(latent_channels) +
                         ",h,w), got " + shape_str(s));
    Tensor h = silu(d1.forward(z));
    h = silu(d2.forward(h));
    return sigmoid(dout.forward(h));
}

ParamSet EditorParams::encoder_params() {
    ParamSet p;
    e1.collect(p, "editor.e1");
    e2.collect(p, "editor.e2");
    ehead.collect(p, "editor.ehead");
    det1.collect(p, "editor.det1");
    det2.collect(p, "editor.det2");
    det3.collect(p, "editor.det3");
    vshift.collect(p, "editor.vshift");
    return p;
}

ParamSet EditorParams::detector_params() {
    ParamSet p;
    det1.collect(p, "editor.det1");
    det2.collect(p, "editor.det2");
    det3.collect(p, "editor.det3");
    vshift.collect(p, "editor.vshift");
    return p;
}

ParamSet EditorParams::decoder_params() {
    ParamSet p;
    d1.collect(p, "editor.d1");
    d2.collect(p, "editor.d2");
    dout.collect(p, "editor.dout");
    return p;
}

ParamSet EditorParams::params() {
    ParamSet p = encoder_params();
    ParamSet d = decoder_params();
    p.insert(p.end(), d.begin(), d.end());
    return p;
}

EditorParams editor_pretrain(const ImageBatch& dataset, const EditorTrainConfig& cfg,
                             const VAEParams* shared_init_from, std::vector<double>* epoch_log,
                             std::ostream* progress, const VAEParams* purifier) {
    if (dataset.size() == 0) throw std::invalid_argument("editor_pretrain: empty dataset");
    Rng init_rng(cfg.seed);
    EditorParams model = (cfg.shared_init && shared_init_from)
                             ? EditorParams::from_vae(*shared_init_from)
                             : EditorParams(32, 64, 4, init_rng);
    // Reconstruction trains the trunk and decoder only; the detector branch
    // gets its gradient from the sensitization losses, so it is left out of
    // the optimizer set when there is no trigger model to sensitize against.
    ParamSet params;
    if (shared_init_from != nullptr) {
        params = model.params();
    } else {
        for (auto& p : model.params())
            if (p.first.find("editor.det") == std::string::npos &&
                p.first.find("editor.vshift") == std::string::npos)
                params.push_back(p);
    }
    Optimizer opt({OptKind::Adam, cfg.lr});

    const int n = dataset.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    const int per = 3 * dataset.height() * dataset.width();

    // Trigger sensitization: when initialised from the protection VAE the
    // editor is additionally trained so that (a) its detector gate fires on
    // trigger-carrying inputs but stays silent on clean images and on plain
    // reconstructions, and (b) trigger-carrying inputs are encoded near the
    // encoding of the guard's reference image. The triggered set is cycled
    // through mild corruptions (noise / jpeg / resample / purification) so
    // the mapping survives preprocessing. The backdoor fine-tune then only
    // polishes an already discriminative mapping instead of fighting the
    // utility term at a tiny learning rate.
    const bool sensitize = shared_init_from != nullptr;
    Tensor trig_all, raw_all, x_ref;
    if (sensitize) {
        trig_all = generate_trigger(*shared_init_from, dataset).data;
        raw_all = vae_decode(*shared_init_from, vae_encode(*shared_init_from, dataset.data).first)
                      .detach();
        x_ref = TargetImage::make(cfg.target_kind, dataset.height(), dataset.width(),
                                  cfg.target_seed)
                    .image;
    }
    constexpr float kCollapseWeight = 1.0f;
    constexpr float kGateWeight = 0.5f;
    constexpr float kRefReconWeight = 0.5f;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = Rng::derive(cfg.seed ^ 0xed17ULL, static_cast<std::uint64_t>(epoch));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<int>(erng.uniform_int(i + 1))]);

        // rotate the corruption applied to the triggered set this epoch so the
        // detector keeps firing under every preprocessing attack it will face
        Tensor trig_ep = trig_all;
        if (sensitize) {
            switch (epoch % 6) {
                case 1:
                    trig_ep = gaussian_noise(trig_all, 0.01,
                                             cfg.seed ^ (0xa06eULL + static_cast<std::uint64_t>(epoch)));
                    break;
                case 2: trig_ep = jpeg_roundtrip(trig_all, 80); break;
                case 3: trig_ep = resample(trig_all, 2); break;
                case 4:
                    if (purifier) {
                        Tensor pr = recon_purify(*purifier, trig_all);
                        trig_ep = trig_all.clone();
                        for (std::size_t i = 0; i < trig_ep.data().size(); ++i)
                            trig_ep.data()[i] = 0.5f * (trig_ep.data()[i] + pr.data()[i]);
                    }
                    break;
                case 5:
                    // counter-protection purification against the (public)
                    // trigger model itself
                    trig_ep = impress_purify(*shared_init_from, trig_all, 0.01, 10, 0.001);
                    break;
                default: break;
            }
        }

        double acc = 0.0;
        double col_acc = 0.0, spread_acc = 0.0;
        int batches = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int end = std::min(n, start + cfg.batch_size);
            Tensor x({end - start, 3, dataset.height(), dataset.width()});
            for (int i = start; i < end; ++i)
                std::copy_n(dataset.data.data().begin() +
                                static_cast<std::ptrdiff_t>(order[i]) * per,
                            per, x.data().begin() + static_cast<std::ptrdiff_t>(i - start) * per);
            Tape<float> tape;
            // the reconstruction objective trains the trunk autoencoder only;
            // the detector correction is trained purely by the collapse and
            // gate terms below, so neither side can game the other's scale
            Tensor z = model.encode_trunk(x);
            Tensor loss = mse(model.decode(z), x);
            const double recon_lv = loss.item();
            if (sensitize) {
                const int bsz = end - start;
                Tensor xt({bsz, 3, dataset.height(), dataset.width()});
                Tensor xr({bsz, 3, dataset.height(), dataset.width()});
                for (int i = start; i < end; ++i) {
                    std::copy_n(trig_ep.data().begin() +
                                    static_cast<std::ptrdiff_t>(order[i]) * per,
                                per,
                                xt.data().begin() + static_cast<std::ptrdiff_t>(i - start) * per);
                    std::copy_n(raw_all.data().begin() +
                                    static_cast<std::ptrdiff_t>(order[i]) * per,
                                per,
                                xr.data().begin() + static_cast<std::ptrdiff_t>(i - start) * per);
                }
                // current trunk encoding of the reference image, tiled over the
                // batch; the trunk anchor keeps the target from chasing the
                // growing correction
                // the trunk autoencoder must also reproduce the reference
                // image itself: redirected latents decode through this same
                // decoder, so its fidelity on the reference bounds how close
                // an edit of a detected input can get to the reference
                Tensor z_ref_g = model.encode_trunk(x_ref);
                loss = add(loss, scalar_mul(mse(model.decode(z_ref_g), x_ref), kRefReconWeight));

                Tensor z_ref = z_ref_g.detach();
                Tensor z_ref_b({bsz, z_ref.shape()[1], z_ref.shape()[2], z_ref.shape()[3]});
                const std::size_t zper = z_ref.data().size();
                for (int b = 0; b < bsz; ++b)
                    std::copy(z_ref.data().begin(), z_ref.data().end(),
                              z_ref_b.data().begin() + static_cast<std::ptrdiff_t>(b) * zper);

                // trunk contribution detached: the collapse must be carried
                // entirely by the discriminative detector correction, so
                // clean encodings are never dragged toward the reference
                Tensor z_t = add(model.encode_trunk(xt).detach(), model.correction(xt));
                Tensor collapse = mse(z_t, z_ref_b);

                Tensor g_t = model.gate(xt);
                Tensor g_c = model.gate(x);
                Tensor g_r = model.gate(xr);
                Tensor g_f = model.gate(x_ref);  // silent on the reference too
                Tensor ones(g_t.shape());
                for (auto& v : ones.data()) v = 1.0f;
                Tensor zeros_c(g_c.shape());
                Tensor zeros_r(g_r.shape());
                Tensor zeros_f(g_f.shape());
                Tensor gate_loss =
                    add(mse(g_t, ones),
                        add(scalar_mul(add(mse(g_c, zeros_c), mse(g_r, zeros_r)), 0.5f),
                            scalar_mul(mse(g_f, zeros_f), 0.25f)));

                loss = add(loss, add(scalar_mul(collapse, kCollapseWeight),
                                     scalar_mul(gate_loss, kGateWeight)));

                col_acc += collapse.item();
                // spread of clean encodings around the reference, as a yardstick
                double sp = 0.0;
                for (std::size_t i = 0; i < z.data().size(); ++i) {
                    const double d = z.data()[i] - z_ref_b.data()[i];
                    sp += d * d;
                }
                spread_acc += sp / static_cast<double>(z.data().size());
            }
            const double lv = recon_lv;
            if (!std::isfinite(loss.item()))
                throw std::runtime_error("editor_pretrain: loss diverged at epoch " +
                                         std::to_string(epoch));
            acc += lv;
            ++batches;
            opt.zero_grad(params);
            loss.backward();
            opt.step(params);
        }
        acc /= batches;
        col_acc /= batches;
        spread_acc /= batches;
        if (epoch_log) epoch_log->push_back(acc);
        if (progress) {
            *progress << "editor epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << acc;
            if (sensitize) *progress << " col " << col_acc << " spread " << spread_acc;
            *progress << "\n";
        }
    }
    return model;
}

// ---------------------------------------------------------------------------
// denoiser
// ---------------------------------------------------------------------------

DenoiserParams::DenoiserParams(int latent, int hidden, int T_, Rng& rng)
    : T(T_), latent_channels(latent) {
    c1 = nn::Conv2d(latent + time_channels, hidden, 3, 1, 1, rng);
    c2 = nn::Conv2d(hidden, hidden, 3, 1, 1, rng);
    c3 = nn::Conv2d(hidden, latent, 3, 1, 1, rng);
    build_schedule();
}

void DenoiserParams::build_schedule() {
    if (T < 1) throw std::invalid_argument("denoiser: T must be >= 1");
    betas.assign(T + 1, 0.0f);  // betas[0] unused
    alpha_bars.assign(T + 1, 1.0f);
    const double beta_lo = 1e-4, beta_hi = 0.02;
    double ab = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double b = T == 1 ? beta_hi : beta_lo + (beta_hi - beta_lo) * (t - 1) / (T - 1);
        betas[t] = static_cast<float>(b);
        ab *= (1.0 - b);
        alpha_bars[t] = static_cast<float>(ab);
    }
}

Tensor DenoiserParams::predict_noise(const Tensor& z_t, int t) const {
    const Shape& s = z_t.shape();
    if (s.size() != 4 || s[1] != latent_channels)
        throw ShapeError("denoiser: expected latent (B," + std::to_string(latent_channels) +
                         ",h,w), got " + shape_str(s));
    if (t < 0 || t > T) throw std::invalid_argument("denoiser: timestep out of range");
    // sinusoidal timestep planes broadcast over the spatial grid
    Tensor tplanes({s[0], time_channels, s[2], s[3]});
    const int hw = s[2] * s[3];
    const double ft = static_cast<double>(t) / T;
    for (int n = 0; n < s[0]; ++n)
        for (int k = 0; k < time_channels / 2; ++k) {
            const double w = 6.283185307179586 * std::pow(2.0, k);
            const float sv = static_cast<float>(std::sin(w * ft));
            const float cv = static_cast<float>(std::cos(w * ft));
            float* base = tplanes.data().data() +
                          (static_cast<std::size_t>(n) * time_channels + 2 * k) * hw;
            std::fill_n(base, hw, sv);
            std::fill_n(base + hw, hw, cv);
        }
    Tensor h = concat(z_t, tplanes);
    h = silu(c1.forward(h));
    h = silu(c2.forward(h));
    return c3.forward(h);
}

ParamSet DenoiserParams::params() {
    ParamSet p;
    c1.collect(p, "denoiser.c1");
    c2.collect(p, "denoiser.c2");
    c3.collect(p, "denoiser.c3");
    return p;
}

DenoiserParams denoiser_train(const EditorParams& editor, const ImageBatch& dataset,
                              const DenoiserTrainConfig& cfg, std::vector<double>* epoch_log,
                              std::ostream* progress) {
    if (dataset.size() == 0) throw std::invalid_argument("denoiser_train: empty dataset");
    Rng init_rng(cfg.seed);
    DenoiserParams model(editor.latent_channels, cfg.hidden, cfg.T, init_rng);
    ParamSet params = model.params();
    Optimizer opt({OptKind::Adam, cfg.lr});

    // frozen editor: encode the corpus once, plus a handful of copies of the
    // reference image so its neighbourhood is on the learned latent manifold
    Tensor corpus_lat = editor.encode(dataset.data).detach();
    const int n_ref = std::max(1, dataset.size() / 16);
    Tensor ref_lat = editor.encode(TargetImage::make(cfg.target_kind, dataset.height(),
                                                     dataset.width(), cfg.target_seed)
                                       .broadcast(1))
                         .detach();
    Tensor latents({corpus_lat.shape()[0] + n_ref, corpus_lat.shape()[1], corpus_lat.shape()[2],
                    corpus_lat.shape()[3]});
    std::copy(corpus_lat.data().begin(), corpus_lat.data().end(), latents.data().begin());
    for (int i = 0; i < n_ref; ++i)
        std::copy(ref_lat.data().begin(), ref_lat.data().end(),
                  latents.data().begin() + corpus_lat.data().size() +
                      static_cast<std::ptrdiff_t>(i) * ref_lat.data().size());
    const Shape& ls = latents.shape();
    const int n = ls[0];
    const int per = ls[1] * ls[2] * ls[3];
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = Rng::derive(cfg.seed ^ 0xdd9eULL, static_cast<std::uint64_t>(epoch));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<int>(erng.uniform_int(i + 1))]);
        double acc = 0.0;
        int batches = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int end = std::min(n, start + cfg.batch_size);
            Tensor z0({end - start, ls[1], ls[2], ls[3]});
            for (int i = start; i < end; ++i)
                std::copy_n(latents.data().begin() + static_cast<std::ptrdiff_t>(order[i]) * per,
                            per, z0.data().begin() + static_cast<std::ptrdiff_t>(i - start) * per);
            const int t = 1 + static_cast<int>(erng.uniform_int(cfg.T));
            const float sab = std::sqrt(model.alpha_bars[t]);
            const float somab = std::sqrt(1.0f - model.alpha_bars[t]);
            Tensor eps(z0.shape());
            for (auto& v : eps.data()) v = static_cast<float>(erng.normal());
            Tensor z_t(z0.shape());
            for (std::size_t i = 0; i < z_t.data().size(); ++i)
                z_t.data()[i] = sab * z0.data()[i] + somab * eps.data()[i];

            Tape<float> tape;
            Tensor loss = mse(model.predict_noise(z_t, t), eps);
            const double lv = loss.item();
            if (!std::isfinite(lv))
                throw std::runtime_error("denoiser_train: loss diverged at epoch " +
                                         std::to_string(epoch));
            acc += lv;
            ++batches;
            opt.zero_grad(params);
            loss.backward();
            opt.step(params);
        }
        acc /= batches;
        if (epoch_log) epoch_log->push_back(acc);
        if (progress)
            *progress << "denoiser epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << acc
                      << "\n";
    }
    return model;
}

// ---------------------------------------------------------------------------
// SDEdit-style editing
// ---------------------------------------------------------------------------

ImageBatch edit(const EditorParams& editor, const DenoiserParams& denoiser, const ImageBatch& x,
                const EditConfig& cfg) {
    if (!(cfg.strength > 0.0f && cfg.strength <= 1.0f))
        throw std::invalid_argument("edit: strength must be in (0, 1]");
    Rng rng(cfg.seed);
    Tensor z = editor.encode(x.data).detach();
    const int T = denoiser.T;
    const int t_start = std::min(T, std::max(1, static_cast<int>(std::ceil(cfg.strength * T))));

    // noise-inject via the closed form q(z_t | z_0)
    {
        const float sab = std::sqrt(denoiser.alpha_bars[t_start]);
        const float somab = std::sqrt(1.0f - denoiser.alpha_bars[t_start]);
        for (auto& v : z.data()) v = sab * v + somab * static_cast<float>(rng.normal());
    }

    // descending timestep ladder; subsampled when num_steps caps it
    std::vector<int> ts;
    if (cfg.num_steps <= 0 || cfg.num_steps >= t_start) {
        for (int t = t_start; t >= 1; --t) ts.push_back(t);
    } else {
        for (int i = 0; i < cfg.num_steps; ++i) {
            int t = t_start - (t_start - 1) * i / (cfg.num_steps - 1 > 0 ? cfg.num_steps - 1 : 1);
            if (ts.empty() || ts.back() != t) ts.push_back(t);
        }
        if (ts.back() != 1) ts.push_back(1);
    }

    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = (i + 1 < ts.size()) ? ts[i + 1] : 0;
        Tensor eps_hat = denoiser.predict_noise(z, t);
        const double ab_t = denoiser.alpha_bars[t];
        const double ab_p = denoiser.alpha_bars[t_prev];
        const double sigma2 = (t_prev == 0)
                                  ? 0.0
                                  : (1.0 - ab_p) / (1.0 - ab_t) * (1.0 - ab_t / ab_p);
        const double dir = std::sqrt(std::max(0.0, 1.0 - ab_p - sigma2));
        const double sab_t = std::sqrt(ab_t), sab_p = std::sqrt(ab_p);
        const double somab_t = std::sqrt(1.0 - ab_t);
        const double sigma = std::sqrt(sigma2);
        for (std::size_t k = 0; k < z.data().size(); ++k) {
            const double e = eps_hat.data()[k];
            const double z0_hat = (z.data()[k] - somab_t * e) / sab_t;
            double v = sab_p * z0_hat + dir * e;
            if (sigma > 0.0) v += sigma * rng.normal();
            z.data()[k] = static_cast<float>(v);
        }
    }

    Tensor out = editor.decode(z);
    return ImageBatch(out, x.ids);
}

}  // namespace gd
