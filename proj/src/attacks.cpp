#include "guarddoor/attacks.hpp"

#include <array>
#include <cmath>

namespace gd {

namespace {

float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

}  // namespace

void AttackSpec::validate() const {
    static const std::vector<std::string> kinds = {"gaussian_noise", "gaussian_blur", "jpeg",
                                                   "resample", "recon_purify", "impress"};
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
        throw std::invalid_argument("unknown attack kind '" + kind + "'");
    if (param("sigma", 0.0) < 0.0) throw std::invalid_argument(kind + ": sigma must be >= 0");
    if (kind == "jpeg") {
        const double q = param("quality", 80.0);
        if (q < 1.0 || q > 100.0) throw std::invalid_argument("jpeg: quality must be in [1,100]");
    }
    if (param("budget", 0.0) < 0.0) throw std::invalid_argument("impress: budget must be >= 0");
    if (kind == "resample" && param("factor", 2.0) < 1.0)
        throw std::invalid_argument("resample: factor must be >= 1");
}

Tensor gaussian_noise(const Tensor& x, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw std::invalid_argument("gaussian_noise: sigma must be >= 0");
    Tensor out = x.clone();
    if (sigma == 0.0) return out;
    const Shape& s = x.shape();
    const std::size_t per = static_cast<std::size_t>(s[1]) * s[2] * s[3];
    for (int n = 0; n < s[0]; ++n) {
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(n));
        float* p = out.data().data() + n * per;
        for (std::size_t i = 0; i < per; ++i)
            p[i] = clamp01(p[i] + static_cast<float>(sigma * rng.normal()));
    }
    return out;
}

Tensor gaussian_blur(const Tensor& x, double sigma) {
    if (sigma < 0.0) throw std::invalid_argument("gaussian_blur: sigma must be >= 0");
    if (sigma == 0.0) return x.clone();
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<float> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
        ksum += kernel[i + radius];
    }
    for (auto& k : kernel) k = static_cast<float>(k / ksum);

    const Shape& s = x.shape();
    const int planes = s[0] * s[1], H = s[2], W = s[3];
    Tensor out(x.shape());
    std::vector<float> tmp(static_cast<std::size_t>(H) * W);
    for (int p = 0; p < planes; ++p) {
        const float* src = x.data().data() + static_cast<std::size_t>(p) * H * W;
        float* dst = out.data().data() + static_cast<std::size_t>(p) * H * W;
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                float acc = 0;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[k + radius] * src[y * W + reflect_index(xx + k, W)];
                tmp[y * W + xx] = acc;
            }
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                float acc = 0;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[k + radius] * tmp[reflect_index(y + k, H) * W + xx];
                dst[y * W + xx] = acc;
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// distortion-only JPEG
// ---------------------------------------------------------------------------

namespace {

// JPEG Annex K reference tables
constexpr std::array<int, 64> kLumaQ = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kChromaQ = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

std::array<float, 64> scaled_table(const std::array<int, 64>& base, int quality) {
    const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::array<float, 64> q;
    for (int i = 0; i < 64; ++i)
        q[i] = static_cast<float>(std::clamp((base[i] * scale + 50) / 100, 1, 255));
    return q;
}

const std::array<std::array<double, 8>, 8>& dct_basis() {
    static const auto basis = [] {
        std::array<std::array<double, 8>, 8> c{};
        for (int u = 0; u < 8; ++u)
            for (int i = 0; i < 8; ++i)
                c[u][i] = std::cos((2 * i + 1) * u * 3.14159265358979323846 / 16.0);
        return c;
    }();
    return basis;
}

void dct8x8(const float* in, float* out) {
    const auto& c = dct_basis();
    for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
            double acc = 0.0;
            for (int i = 0; i < 8; ++i)
                for (int j = 0; j < 8; ++j) acc += in[i * 8 + j] * c[u][i] * c[v][j];
            const double cu = u == 0 ? 0.70710678118654752440 : 1.0;
            const double cv = v == 0 ? 0.70710678118654752440 : 1.0;
            out[u * 8 + v] = static_cast<float>(0.25 * cu * cv * acc);
        }
}

void idct8x8(const float* in, float* out) {
    const auto& c = dct_basis();
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int u = 0; u < 8; ++u)
                for (int v = 0; v < 8; ++v) {
                    const double cu = u == 0 ? 0.70710678118654752440 : 1.0;
                    const double cv = v == 0 ? 0.70710678118654752440 : 1.0;
                    acc += cu * cv * in[u * 8 + v] * c[u][i] * c[v][j];
                }
            out[i * 8 + j] = static_cast<float>(0.25 * acc);
        }
}

void codec_plane(std::vector<float>& plane, int h, int w, const std::array<float, 64>& q) {
    float block[64], coeff[64];
    for (int by = 0; by < h; by += 8)
        for (int bx = 0; bx < w; bx += 8) {
            for (int i = 0; i < 8; ++i)
                for (int j = 0; j < 8; ++j) block[i * 8 + j] = plane[(by + i) * w + bx + j] - 128.0f;
            dct8x8(block, coeff);
            for (int i = 0; i < 64; ++i) coeff[i] = std::round(coeff[i] / q[i]) * q[i];
            idct8x8(coeff, block);
            for (int i = 0; i < 8; ++i)
                for (int j = 0; j < 8; ++j) plane[(by + i) * w + bx + j] = block[i * 8 + j] + 128.0f;
        }
}

}  // namespace

Tensor jpeg_roundtrip(const Tensor& x, int quality) {
    if (quality < 1 || quality > 100)
        throw std::invalid_argument("jpeg: quality must be in [1,100], got " +
                                    std::to_string(quality));
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] % 8 != 0 || s[3] % 8 != 0)
        throw ShapeError("jpeg: expected (B,3,H,W) with H,W divisible by 8, got " + shape_str(s));
    const int N = s[0], H = s[2], W = s[3], hw = H * W;
    const auto ql = scaled_table(kLumaQ, quality);
    const auto qc = scaled_table(kChromaQ, quality);
    Tensor out(x.shape());
    std::vector<float> Y(hw), Cb(hw), Cr(hw);
    for (int n = 0; n < N; ++n) {
        const float* r = x.data().data() + static_cast<std::size_t>(n) * 3 * hw;
        const float* g = r + hw;
        const float* b = g + hw;
        // ITU-R BT.601 full range, 0..255 scale
        for (int i = 0; i < hw; ++i) {
            const float R = r[i] * 255.0f, G = g[i] * 255.0f, B = b[i] * 255.0f;
            Y[i] = 0.299f * R + 0.587f * G + 0.114f * B;
            Cb[i] = -0.168736f * R - 0.331264f * G + 0.5f * B + 128.0f;
            Cr[i] = 0.5f * R - 0.418688f * G - 0.081312f * B + 128.0f;
        }
        codec_plane(Y, H, W, ql);
        codec_plane(Cb, H, W, qc);
        codec_plane(Cr, H, W, qc);
        float* ro = out.data().data() + static_cast<std::size_t>(n) * 3 * hw;
        float* go = ro + hw;
        float* bo = go + hw;
        for (int i = 0; i < hw; ++i) {
            const float y = Y[i], cb = Cb[i] - 128.0f, cr = Cr[i] - 128.0f;
            ro[i] = clamp01((y + 1.402f * cr) / 255.0f);
            go[i] = clamp01((y - 0.344136f * cb - 0.714136f * cr) / 255.0f);
            bo[i] = clamp01((y + 1.772f * cb) / 255.0f);
        }
    }
    return out;
}

Tensor resample(const Tensor& x, int factor) {
    if (factor < 1) throw std::invalid_argument("resample: factor must be >= 1");
    if (factor == 1) return x.clone();
    const Shape& s = x.shape();
    const int dh = std::max(1, s[2] / factor);
    const int dw = std::max(1, s[3] / factor);
    Tensor small = resize_bilinear(x, dh, dw);
    Tensor out = resize_bilinear(small, s[2], s[3]);
    for (auto& v : out.data()) v = clamp01(v);
    return out;
}

Tensor recon_purify(const VAEParams& purifier, const Tensor& x) {
    auto [mu, logvar] = vae_encode(purifier, x);
    return vae_decode(purifier, mu);
}

Tensor impress_purify(const VAEParams& vae_pub, const Tensor& x, double budget, int steps,
                      double lr, std::vector<double>* step_losses) {
    if (budget < 0.0) throw std::invalid_argument("impress: budget must be >= 0");
    Tensor adv = x.detach();
    for (int step = 0; step < steps; ++step) {
        adv.set_requires_grad(true);
        double loss_v;
        {
            Tape<float> tape;
            auto [mu, logvar] = vae_encode(vae_pub, adv);
            Tensor recon = vae_decode(vae_pub, mu);
            Tensor loss = mse(recon, adv);
            loss_v = loss.item();
            loss.backward();
        }
        if (step_losses) step_losses->push_back(loss_v);
        const auto& g = adv.grad_view();
        Tensor next = adv.detach();
        for (std::size_t i = 0; i < next.data().size(); ++i) {
            float v = next.data()[i] - static_cast<float>(lr) * (g[i] > 0 ? 1.0f : (g[i] < 0 ? -1.0f : 0.0f));
            const float lo = std::max(0.0f, x.data()[i] - static_cast<float>(budget));
            const float hi = std::min(1.0f, x.data()[i] + static_cast<float>(budget));
            next.data()[i] = std::clamp(v, lo, hi);
        }
        adv = next;
    }
    return adv;
}

Tensor apply_attack(const AttackSpec& spec, const Tensor& x, const AttackContext& ctx) {
    spec.validate();
    if (spec.kind == "gaussian_noise")
        return gaussian_noise(x, spec.param("sigma", 0.01), spec.seed);
    if (spec.kind == "gaussian_blur") return gaussian_blur(x, spec.param("sigma", 1.0));
    if (spec.kind == "jpeg")
        return jpeg_roundtrip(x, static_cast<int>(spec.param("quality", 80.0)));
    if (spec.kind == "resample") return resample(x, static_cast<int>(spec.param("factor", 2.0)));
    if (spec.kind == "recon_purify") {
        if (!ctx.purifier)
            throw std::runtime_error("recon_purify: no purifier model available (train one first)");
        // Blend the purifier reconstruction with the original: a full
        // replacement would leave the attacked image at the purifier's own
        // reconstruction quality, far more degraded than any other attack
        // here and useless to an attacker who still wants an editable image.
        const double blend = spec.param("blend", 0.5);
        if (blend < 0.0 || blend > 1.0)
            throw std::invalid_argument("recon_purify: blend must be in [0, 1]");
        Tensor rec = recon_purify(*ctx.purifier, x);
        for (std::size_t i = 0; i < rec.data().size(); ++i)
            rec.data()[i] = static_cast<float>(blend) * rec.data()[i] +
                            static_cast<float>(1.0 - blend) * x.data()[i];
        return rec;
    }
    if (spec.kind == "impress") {
        if (!ctx.vae_pub)
            throw std::runtime_error("impress: no public reconstruction model available");
        return impress_purify(*ctx.vae_pub, x, spec.param("budget", 0.01),
                              static_cast<int>(spec.param("steps", 10.0)),
                              spec.param("lr", 0.001));
    }
    throw std::invalid_argument("unknown attack kind '" + spec.kind + "'");
}

Tensor apply_attack_pipeline(const std::vector<AttackSpec>& specs, const Tensor& x,
                             const AttackContext& ctx) {
    Tensor cur = x.clone();
    for (const auto& s : specs) cur = apply_attack(s, cur, ctx);
    return cur;
}

Tensor pgd_encoder_baseline(const EditorParams& editor, const Tensor& x, const BaselineSpec& spec,
                            const Tensor& x_tar, std::vector<double>* step_losses) {
    if (spec.epsilon <= 0.0f) throw std::invalid_argument("pgd: epsilon must be > 0");
    if (spec.steps < 1) throw std::invalid_argument("pgd: steps must be >= 1");
    const bool eot = spec.kind == "pgd_encoder_eot";
    if (!eot && spec.kind != "pgd_encoder")
        throw std::invalid_argument("unknown baseline kind '" + spec.kind + "'");

    Tensor z_tar = editor.encode(x_tar).detach();
    Tensor adv = x.detach();
    Rng rng(spec.seed ^ 0xe07e07ULL);
    const int samples = eot ? std::max(1, spec.eot_samples) : 1;

    for (int step = 0; step < spec.steps; ++step) {
        std::vector<float> grad(adv.numel(), 0.0f);
        double loss_acc = 0.0;
        for (int si = 0; si < samples; ++si) {
            const double sigma = eot ? rng.uniform(0.0, spec.eot_blur_sigma) : 0.0;
            Tensor inp = sigma > 0.0 ? gaussian_blur(adv, sigma) : adv.detach();
            inp.set_requires_grad(true);
            {
                Tape<float> tape;
                Tensor loss = mse(editor.encode(inp), z_tar);
                loss_acc += loss.item();
                loss.backward();
            }
            const auto& g = inp.grad_view();
            if (sigma > 0.0) {
                // adjoint of the (symmetric) blur applied to the gradient
                Tensor gt = Tensor::from_data(adv.shape(), std::vector<float>(g.begin(), g.end()));
                Tensor gb = gaussian_blur(gt, sigma);
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += gb.data()[i];
            } else {
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
            }
        }
        if (step_losses) step_losses->push_back(loss_acc / samples);
        Tensor next = adv.detach();
        for (std::size_t i = 0; i < next.data().size(); ++i) {
            float v = next.data()[i] -
                      spec.step_size * (grad[i] > 0 ? 1.0f : (grad[i] < 0 ? -1.0f : 0.0f));
            const float lo = std::max(0.0f, x.data()[i] - spec.epsilon);
            const float hi = std::min(1.0f, x.data()[i] + spec.epsilon);
            next.data()[i] = std::clamp(v, lo, hi);
        }
        adv = next;
    }
    return adv;
}

}  // namespace gd
