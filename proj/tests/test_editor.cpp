#include <cmath>
#include <vector>

#include "doctest.h"
#include "guarddoor/editor.hpp"
#include "guarddoor/metrics.hpp"

using namespace gd;

namespace {

ImageBatch tiny_corpus(int n, int size, std::uint64_t seed) {
    CorpusSpec spec;
    spec.n_train = n;
    spec.n_test = 1;
    spec.size = size;
    spec.seed = seed;
    return generate_corpus(spec).train;
}

}  // namespace

TEST_CASE("editor initialized from a vae reproduces its mean encoding") {
    Rng rng(1);
    VAEParams vae(8, 8, 4, rng);
    EditorParams ed = EditorParams::from_vae(vae);
    Tensor x({2, 3, 16, 16}, 0.4f);
    auto [mu, logvar] = vae_encode(vae, x);
    Tensor z = ed.encode(x);
    REQUIRE(z.shape() == mu.shape());
    for (std::size_t i = 0; i < z.numel(); ++i)
        CHECK(z.data()[i] == doctest::Approx(mu.data()[i]));
    // cloned weights are independent buffers
    ed.e1.w.data()[0] += 1.0f;
    CHECK(ed.e1.w.data()[0] != vae.enc1.w.data()[0]);
}

TEST_CASE("editor pretraining reduces the reconstruction loss") {
    ImageBatch data = tiny_corpus(8, 16, 3);
    EditorTrainConfig cfg;
    cfg.epochs = 25;
    cfg.batch_size = 4;
    cfg.lr = 2e-3f;
    cfg.seed = 4;
    cfg.shared_init = false;
    std::vector<double> log;
    editor_pretrain(data, cfg, nullptr, &log);
    REQUIRE(log.size() == 25);
    CHECK(log.back() < log.front());
    CHECK(log.back() < 0.05);
}

TEST_CASE("noise schedule endpoints and monotonicity") {
    Rng rng(5);
    DenoiserParams den(4, 8, 100, rng);
    CHECK(den.betas[1] == doctest::Approx(1e-4));
    CHECK(den.betas[100] == doctest::Approx(0.02));
    CHECK(den.alpha_bars[0] == doctest::Approx(1.0));
    for (int t = 1; t <= 100; ++t) {
        CHECK(den.alpha_bars[t] < den.alpha_bars[t - 1]);
        CHECK(den.alpha_bars[t] > 0.0f);
    }
    // cumulative product oracle
    double ab = 1.0;
    for (int t = 1; t <= 100; ++t) ab *= 1.0 - den.betas[t];
    CHECK(den.alpha_bars[100] == doctest::Approx(ab).epsilon(1e-4));
}

TEST_CASE("noise prediction shape checks and timestep bounds") {
    Rng rng(6);
    DenoiserParams den(4, 8, 50, rng);
    Tensor z({2, 4, 4, 4}, 0.1f);
    CHECK(den.predict_noise(z, 25).shape() == z.shape());
    CHECK_THROWS(den.predict_noise(z, 51));
    CHECK_THROWS_AS(den.predict_noise(Tensor({2, 3, 4, 4}), 10), ShapeError);
    // different timesteps produce different predictions (time planes matter)
    Tensor a = den.predict_noise(z, 1);
    Tensor b = den.predict_noise(z, 40);
    CHECK(a.data() != b.data());
}

TEST_CASE("denoiser training reduces the prediction loss") {
    ImageBatch data = tiny_corpus(8, 16, 7);
    Rng rng(7);
    EditorParams ed(8, 8, 4, rng);
    DenoiserTrainConfig cfg;
    cfg.T = 50;
    cfg.epochs = 40;
    cfg.batch_size = 8;
    cfg.lr = 2e-3f;
    cfg.hidden = 8;
    cfg.seed = 8;
    std::vector<double> log;
    denoiser_train(ed, data, cfg, &log);
    REQUIRE(log.size() == 40);
    // average the ends to smooth the random-timestep noise
    double head = 0, tail = 0;
    for (int i = 0; i < 5; ++i) {
        head += log[i];
        tail += log[log.size() - 1 - i];
    }
    CHECK(tail < head);
}

TEST_CASE("editing at minimal strength is close to plain reconstruction") {
    ImageBatch data = tiny_corpus(2, 16, 9);
    Rng rng(9);
    EditorParams ed(8, 8, 4, rng);
    DenoiserParams den(4, 8, 100, rng);
    EditConfig cfg;
    cfg.strength = 0.01f;  // t_start = 1: almost no noise injected
    cfg.seed = 1;
    ImageBatch out = edit(ed, den, data, cfg);
    Tensor recon = ed.decode(ed.encode(data.data));
    CHECK(mse_value(out.data, recon) < 1e-3);
    CHECK(out.ids == data.ids);
}

TEST_CASE("editing is deterministic per seed and strength is validated") {
    ImageBatch data = tiny_corpus(2, 16, 10);
    Rng rng(10);
    EditorParams ed(8, 8, 4, rng);
    DenoiserParams den(4, 8, 100, rng);
    EditConfig cfg;
    cfg.strength = 0.3f;
    cfg.seed = 5;
    ImageBatch a = edit(ed, den, data, cfg);
    ImageBatch b = edit(ed, den, data, cfg);
    CHECK(a.data.data() == b.data.data());
    cfg.seed = 6;
    ImageBatch c = edit(ed, den, data, cfg);
    CHECK(a.data.data() != c.data.data());
    cfg.strength = 0.0f;
    CHECK_THROWS(edit(ed, den, data, cfg));
    cfg.strength = 1.5f;
    CHECK_THROWS(edit(ed, den, data, cfg));
}

TEST_CASE("a subsampled timestep ladder still lands on a valid image") {
    ImageBatch data = tiny_corpus(1, 16, 11);
    Rng rng(11);
    EditorParams ed(8, 8, 4, rng);
    DenoiserParams den(4, 8, 100, rng);
    EditConfig cfg;
    cfg.strength = 0.5f;
    cfg.num_steps = 5;
    cfg.seed = 2;
    ImageBatch out = edit(ed, den, data, cfg);
    CHECK(out.data.shape() == data.data.shape());
    CHECK(out.data.all_finite());
    for (float v : out.data.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}
