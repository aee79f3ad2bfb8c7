// Acceptance gate: one pass/fail line per criterion, exit code = #failures.
//
// Covers gradient correctness, backdoor efficacy, utility preservation,
// robustness ordering vs PGD baselines, imperceptibility, protect/PGD cost
// ratio, codec and metric oracles, determinism, and the end-to-end budget.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "guarddoor/attacks.hpp"
#include "guarddoor/checkpoint.hpp"
#include "guarddoor/config.hpp"
#include "guarddoor/guard.hpp"
#include "guarddoor/metrics.hpp"
#include "guarddoor/pipeline.hpp"

namespace fs = std::filesystem;
using namespace gd;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void verdict(int criterion, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// criterion 1: reverse-mode gradients vs central finite differences, in double
// ---------------------------------------------------------------------------

using DTensor = TensorT<double>;

struct RandomNet {
    std::vector<DTensor> params;
    int in_ch, mid_ch, out_ch, k, stride;

    RandomNet(Rng& rng, int variant) {
        in_ch = 1 + static_cast<int>(rng.uniform() * 2.99);
        mid_ch = 2 + static_cast<int>(rng.uniform() * 4.99);
        out_ch = 1 + static_cast<int>(rng.uniform() * 2.99);
        k = 3;
        stride = (variant % 2 == 0) ? 1 : 2;
        params.push_back(DTensor::randn({mid_ch, in_ch, k, k}, rng, 0.3, true));
        params.push_back(DTensor::randn({mid_ch}, rng, 0.1, true));
        params.push_back(DTensor::randn({out_ch, mid_ch, k, k}, rng, 0.3, true));
    }

    DTensor loss(const DTensor& x, const DTensor& target) const {
        DTensor h = silu(bias_add(conv2d(x, params[0], stride, 1), params[1]));
        DTensor y = conv2d(h, params[2], 1, 1);
        return mse(sigmoid(y), target);
    }
};

void run_gradient_oracle() {
    const auto t0 = Clock::now();
    Rng rng(2024);
    double worst = 0.0;
    int nets = 0;
    for (int trial = 0; trial < 20; ++trial) {
        RandomNet net(rng, trial);
        const int hw = 6;
        DTensor x = DTensor::randn({1, net.in_ch, hw, hw}, rng, 0.5);
        const int oh = (net.stride == 1) ? hw : hw / net.stride;
        DTensor target = DTensor::randn({1, net.out_ch, oh, oh}, rng, 0.5);

        net.loss(x, target).backward();
        for (DTensor& p : net.params) {
            const std::vector<double> grad = p.grad();
            for (std::size_t i = 0; i < p.numel(); ++i) {
                const double h = 1e-6;
                const double keep = p.data()[i];
                p.data()[i] = keep + h;
                const double lp = net.loss(x, target).item();
                p.data()[i] = keep - h;
                const double lm = net.loss(x, target).item();
                p.data()[i] = keep;
                const double fd = (lp - lm) / (2 * h);
                const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-7});
                if (std::abs(fd) < 1e-7 && std::abs(grad[i]) < 1e-7) continue;
                worst = std::max(worst, std::abs(fd - grad[i]) / denom);
            }
            p.zero_grad();
        }
        ++nets;
    }
    const double secs = seconds_since(t0);
    verdict(1, worst <= 1e-3 && secs <= 120.0,
            "gradient check on " + std::to_string(nets) + " random nets: max rel err " +
                fmt(worst, 3) + " (limit 1e-3), " + fmt(secs, 3) + " s (limit 120)");
}

// ---------------------------------------------------------------------------
// criterion 7: codec and metric oracles + fuzzed attack invariants
// ---------------------------------------------------------------------------

void run_codec_metric_oracles() {
    Rng rng(99);
    Tensor x = Tensor::randn({2, 3, 24, 24}, rng, 0.2);
    for (float& v : x.data()) v = std::min(1.0f, std::max(0.0f, v + 0.5f));

    const double q100 = psnr(jpeg_roundtrip(x, 100), x);
    bool monotone = true;
    double prev = -1.0;
    for (int q : {5, 20, 50, 80, 95, 100}) {
        const double p = psnr(jpeg_roundtrip(x, q), x);
        monotone = monotone && (p >= prev - 1e-9);
        prev = p;
    }

    Tensor ca({1, 3, 16, 16}, 0.2f);
    Tensor cb({1, 3, 16, 16}, 0.4f);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const double mua = 0.2, mub = 0.4;
    const double expected = ((2 * mua * mub + c1) / (mua * mua + mub * mub + c1));
    const bool const_ok = std::abs(ssim(ca, cb) - expected) <= 1e-4;
    const bool self_ok = std::abs(ssim(x, x) - 1.0) <= 1e-9;

    int fuzz_fail = 0;
    Rng frng(7);
    for (int i = 0; i < 1000; ++i) {
        const int n = 1 + static_cast<int>(frng.uniform() * 1.99);
        const int h = 8 + 2 * static_cast<int>(frng.uniform() * 6.99);
        Tensor img = Tensor::randn({n, 3, h, h}, frng, 0.3);
        for (float& v : img.data()) v = std::min(1.0f, std::max(0.0f, v + 0.5f));
        AttackSpec spec;
        const int pick = i % 4;
        if (pick == 0) {
            spec.kind = "gaussian_noise";
            spec.params["sigma"] = 0.001 + frng.uniform() * 0.2;
            spec.seed = i;
        } else if (pick == 1) {
            spec.kind = "gaussian_blur";
            spec.params["sigma"] = 0.2 + frng.uniform() * 2.0;
        } else if (pick == 2) {
            spec.kind = "jpeg";
            spec.params["quality"] = 1 + static_cast<int>(frng.uniform() * 99.0);
        } else {
            spec.kind = "resample";
            spec.params["factor"] = 2;
        }
        AttackContext ctx;
        Tensor y = apply_attack(spec, img, ctx);
        bool ok = y.shape() == img.shape();
        for (float v : y.data()) ok = ok && std::isfinite(v) && v >= 0.0f && v <= 1.0f;
        if (!ok) ++fuzz_fail;
    }

    verdict(7, q100 >= 45.0 && monotone && const_ok && self_ok && fuzz_fail == 0,
            "jpeg q100 " + fmt(q100, 4) + " dB (>=45), quality sweep monotone=" +
                (monotone ? std::string("yes") : std::string("no")) +
                ", constant-image ssim matches closed form, ssim(x,x)=1, fuzz failures " +
                std::to_string(fuzz_fail) + "/1000");
}

// ---------------------------------------------------------------------------
// criterion 8: determinism of the full pipeline (reduced size, same steps)
// ---------------------------------------------------------------------------

RunConfig reduced_config(const std::string& out_dir) {
    RunConfig cfg = RunConfig::defaults();
    cfg.out_dir = out_dir;
    cfg.seed = 21;
    cfg.corpus.n_train = 24;
    cfg.corpus.n_test = 6;
    cfg.corpus.size = 24;
    cfg.vae_train.epochs = 3;
    cfg.purifier_train.epochs = 3;
    cfg.editor_train.epochs = 3;
    cfg.denoiser_train.epochs = 3;
    cfg.guard.epochs = 3;
    for (auto& b : cfg.baselines) b.steps = 5;
    for (auto& a : cfg.attacks)
        if (a.kind == "impress") a.params["steps"] = 3;
    cfg.derive_seeds();
    return cfg;
}

void run_all_steps(const RunConfig& cfg) {
    step_gen_data(cfg);
    step_train_vae(cfg);
    step_train_editor(cfg);
    step_train_denoiser(cfg);
    step_inject(cfg);
    step_evaluate(cfg);
    std::ostringstream sink;
    step_report(cfg, &sink);
}

void run_determinism() {
    const fs::path base = fs::temp_directory_path() / "gd_accept_det";
    fs::remove_all(base);
    RunConfig a = reduced_config((base / "a").string());
    RunConfig b = reduced_config((base / "b").string());
    run_all_steps(a);
    run_all_steps(b);

    std::ifstream ra(PipelinePaths(a.out_dir).report_json);
    std::ifstream rb(PipelinePaths(b.out_dir).report_json);
    std::stringstream sa, sb;
    sa << ra.rdbuf();
    sb << rb.rdbuf();
    EvalReport repa = EvalReport::from_json(sa.str());
    EvalReport repb = EvalReport::from_json(sb.str());

    double max_diff = 0.0;
    bool rows_match = repa.rows.size() == repb.rows.size();
    for (std::size_t i = 0; rows_match && i < repa.rows.size(); ++i) {
        const EvalRow& x = repa.rows[i];
        const EvalRow& y = repb.rows[i];
        rows_match = x.method == y.method && x.attack == y.attack &&
                     x.metrics.size() == y.metrics.size();
        for (const auto& [k, v] : x.metrics) {
            if (!y.metrics.count(k)) {
                rows_match = false;
                break;
            }
            max_diff = std::max(max_diff, std::abs(v - y.metrics.at(k)));
        }
    }

    bool checkpoints_identical = true;
    for (const auto& entry : fs::directory_iterator(base / "a" / "checkpoints")) {
        const fs::path other = base / "b" / "checkpoints" / entry.path().filename();
        checkpoints_identical = checkpoints_identical && fs::exists(other) &&
                                checkpoint_file_hash(entry.path().string()) ==
                                    checkpoint_file_hash(other.string());
    }

    verdict(8, rows_match && max_diff <= 1e-6 && checkpoints_identical,
            "repeat run: report metric max |diff| " + fmt(max_diff, 3) +
                " (limit 1e-6), checkpoints byte-identical=" +
                (checkpoints_identical ? std::string("yes") : std::string("no")));
    fs::remove_all(base);
}

// ---------------------------------------------------------------------------
// criteria 2-6 and 9: one full default-configuration run
// ---------------------------------------------------------------------------

double per_image_mse(const Tensor& a, const Tensor& b, int i) {
    const std::size_t per = a.numel() / a.shape()[0];
    double acc = 0;
    for (std::size_t j = 0; j < per; ++j) {
        const double d = a.data()[i * per + j] - b.data()[i * per + j];
        acc += d * d;
    }
    return acc / static_cast<double>(per);
}

double per_image_l2(const Tensor& a, const Tensor& b, int ia, int ib) {
    const std::size_t per = a.numel() / a.shape()[0];
    double acc = 0;
    for (std::size_t j = 0; j < per; ++j) {
        const double d = a.data()[ia * per + j] - b.data()[ib * per + j];
        acc += d * d;
    }
    return std::sqrt(acc);
}

void run_default_pipeline_suite() {
    RunConfig cfg = RunConfig::defaults();
    const fs::path out = fs::temp_directory_path() / "gd_accept_run";
    fs::remove_all(out);
    cfg.out_dir = out.string();
    cfg.derive_seeds();
    const PipelinePaths paths(cfg.out_dir);

    const auto t0 = Clock::now();
    step_gen_data(cfg, &std::cerr);
    step_train_vae(cfg, &std::cerr);
    step_train_editor(cfg, &std::cerr);
    step_train_denoiser(cfg, &std::cerr);
    const std::uint64_t denoiser_hash_before = checkpoint_file_hash(paths.denoiser_ck);
    step_inject(cfg, &std::cerr);
    const std::uint64_t denoiser_hash_after = checkpoint_file_hash(paths.denoiser_ck);
    step_evaluate(cfg, &std::cerr);
    std::ostringstream report_sink;
    step_report(cfg, &report_sink);
    const double pipeline_secs = seconds_since(t0);

    PipelineContext ctx = PipelineContext::load(cfg);
    const ImageBatch& test = ctx.corpus.test;
    const int n = test.size();
    const int h = test.height(), w = test.width();

    // --- criterion 2: efficacy on the held-out split -----------------------
    ImageBatch prot = protect(ctx.vae, test);
    ImageBatch edited_prot = edit(ctx.editor_injected, ctx.denoiser, prot, cfg.edit);
    TargetImage tar = TargetImage::make(cfg.guard.target_kind, h, w, cfg.guard.seed);
    Tensor tar_batch = tar.broadcast(n);

    int toward_target = 0;
    for (int i = 0; i < n; ++i)
        if (per_image_mse(edited_prot.data, tar_batch, i) <
            per_image_mse(edited_prot.data, test.data, i))
            ++toward_target;
    const double frac = static_cast<double>(toward_target) / n;

    Tensor z_prot = ctx.editor_injected.encode(prot.data);
    Tensor z_clean = ctx.editor_injected.encode(test.data);
    Tensor z_tar = ctx.editor_injected.encode(tar.image);
    double sep_sum = 0;
    for (int i = 0; i < n; ++i)
        sep_sum += per_image_l2(z_prot, z_tar, i, 0) /
                   std::max(per_image_l2(z_clean, z_tar, i, 0), 1e-12);
    const double sep_ratio = sep_sum / n;
    verdict(2, frac >= 0.9 && sep_ratio <= 0.5,
            "protected edits pulled toward target for " + fmt(100 * frac, 3) +
                "% of " + std::to_string(n) + " held-out images (>=90%), latent separation ratio " +
                fmt(sep_ratio, 3) + " (<=0.5)");

    // --- criterion 3: utility preservation ---------------------------------
    Tensor recon_injected = ctx.editor_injected.decode(ctx.editor_injected.encode(test.data));
    Tensor recon_clean = ctx.editor_clean.decode(ctx.editor_clean.encode(test.data));
    const double utility_ssim = ssim(recon_injected, recon_clean);

    ParamSet dec_a = ctx.editor_clean.decoder_params();
    ParamSet dec_b = ctx.editor_injected.decoder_params();
    bool decoder_identical = dec_a.size() == dec_b.size();
    for (std::size_t i = 0; decoder_identical && i < dec_a.size(); ++i)
        decoder_identical = dec_a[i].second.data() == dec_b[i].second.data();
    const bool denoiser_identical = denoiser_hash_before == denoiser_hash_after;
    verdict(3, utility_ssim >= 0.8 && decoder_identical && denoiser_identical,
            "clean-input ssim(injected editor, clean editor) " + fmt(utility_ssim, 4) +
                " (>=0.8), decoder byte-identical=" + (decoder_identical ? "yes" : "no") +
                ", denoiser checkpoint unchanged=" + (denoiser_identical ? "yes" : "no"));

    // --- criterion 4: robustness ordering from the evaluation matrix -------
    std::ifstream rf(paths.report_json);
    std::stringstream rs;
    rs << rf.rdbuf();
    EvalReport report = EvalReport::from_json(rs.str());

    bool ordering_ok = true;
    std::string worst_cell;
    const EvalRow* gd_none = report.find("guarddoor", "none");
    const double none_score = gd_none ? gd_none->metrics.at("protect_score") : -1.0;
    for (const std::string& atk :
         {std::string("gaussian_noise"), std::string("jpeg"), std::string("resample"),
          std::string("recon_purify"), std::string("impress")}) {
        const EvalRow* mine = report.find("guarddoor", atk);
        const EvalRow* pgd = report.find("pgd_encoder", atk);
        if (!mine || !pgd || mine->skipped || pgd->skipped) {
            ordering_ok = false;
            worst_cell = atk + " missing";
            continue;
        }
        const double ms = mine->metrics.at("protect_score");
        const double ps = pgd->metrics.at("protect_score");
        if (!(ms >= ps && ms >= 0.6 * none_score)) {
            ordering_ok = false;
            worst_cell = atk + " (ours " + fmt(ms, 3) + ", pgd " + fmt(ps, 3) + ", no-attack " +
                         fmt(none_score, 3) + ")";
        }
    }
    verdict(4, ordering_ok && none_score > 0,
            ordering_ok
                ? "protect_score >= pgd baseline and >= 0.6x no-attack score (" +
                      fmt(none_score, 3) + ") under all five attacks"
                : "ordering violated at " + worst_cell);

    // --- criterion 5: imperceptibility vs the PGD perturbation -------------
    const double prot_psnr = psnr(prot.data, test.data);
    const double prot_ssim = ssim(prot.data, test.data);

    BaselineSpec pgd_spec = cfg.baselines.empty() ? BaselineSpec{} : cfg.baselines[0];
    const int n_adv = std::min(16, n);
    ImageBatch adv_subset = test.slice(0, n_adv);
    Tensor x_adv = pgd_encoder_baseline(ctx.editor_clean, adv_subset.data, pgd_spec,
                                        tar.broadcast(n_adv));
    const double adv_psnr = psnr(x_adv, adv_subset.data);
    verdict(5, prot_psnr >= 20.0 && prot_ssim >= 0.7 && prot_psnr > adv_psnr,
            "protected images: psnr " + fmt(prot_psnr, 4) + " dB (>=20), ssim " +
                fmt(prot_ssim, 4) + " (>=0.7); pgd 16/255 perturbation psnr " + fmt(adv_psnr, 4) +
                " dB (must be lower)");

    // --- criterion 6: protect cost vs PGD cost -----------------------------
    ImageBatch timing_subset = test.slice(0, n_adv);
    const auto tp0 = Clock::now();
    protect(ctx.vae, timing_subset);
    const double protect_per_image = seconds_since(tp0) / n_adv;
    const auto tb0 = Clock::now();
    pgd_encoder_baseline(ctx.editor_clean, timing_subset.data, pgd_spec, tar.broadcast(n_adv));
    const double pgd_per_image = seconds_since(tb0) / n_adv;
    const double ratio = protect_per_image / pgd_per_image;
    verdict(6, ratio <= 0.05,
            "protect " + fmt(1000 * protect_per_image, 3) + " ms/image vs pgd " +
                fmt(1000 * pgd_per_image, 3) + " ms/image over " + std::to_string(n_adv) +
                " images: ratio " + fmt(ratio, 3) + " (<=0.05)");

    // --- criterion 9: end-to-end budget ------------------------------------
    verdict(9, pipeline_secs <= 1800.0,
            "default pipeline gen-data..report took " + fmt(pipeline_secs, 4) +
                " s (limit 1800)");

    fs::remove_all(out);
}

}  // namespace

int main() {
    std::printf("acceptance gate: protective backdoor pipeline\n");
    run_gradient_oracle();
    run_codec_metric_oracles();
    run_determinism();
    run_default_pipeline_suite();
    std::printf("%s: %d criteria failed\n", g_failures == 0 ? "OK" : "NOT OK", g_failures);
    return g_failures;
}
