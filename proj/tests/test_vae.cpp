#include <cmath>
#include <vector>

#include "doctest.h"
#include "guarddoor/metrics.hpp"
#include "guarddoor/vae.hpp"

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

bool params_equal(ParamSet a, ParamSet b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].second.data() != b[i].second.data()) return false;
    return true;
}

}  // namespace

TEST_CASE("encoder and decoder shapes are mirrored") {
    Rng rng(1);
    VAEParams vae(8, 16, 4, rng);
    Tensor x({2, 3, 16, 16}, 0.5f);
    auto [mu, logvar] = vae_encode(vae, x);
    CHECK(mu.shape() == Shape{2, 4, 4, 4});
    CHECK(logvar.shape() == Shape{2, 4, 4, 4});
    Tensor recon = vae_decode(vae, mu);
    CHECK(recon.shape() == x.shape());
    for (float v : recon.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK_THROWS_AS(vae_encode(vae, Tensor({1, 3, 10, 10})), ShapeError);
    CHECK_THROWS_AS(vae_decode(vae, Tensor({1, 3, 4, 4})), ShapeError);
}

TEST_CASE("a single image can be overfit to low reconstruction error") {
    ImageBatch one = tiny_corpus(1, 16, 31);
    VAETrainConfig cfg;
    cfg.epochs = 250;
    cfg.batch_size = 1;
    cfg.lr = 2e-3f;
    cfg.kl_weight = 0.0f;
    cfg.seed = 5;
    Rng rng(5);
    VAEParams init(8, 16, 4, rng);
    std::vector<VAELosses> log;
    VAEParams vae = vae_train(cfg, one, &log, nullptr, &init);
    auto [mu, logvar] = vae_encode(vae, one.data);
    const double err = mse_value(vae_decode(vae, mu), one.data);
    CHECK(err <= 0.01);
    CHECK(log.back().recon < log.front().recon);
}

TEST_CASE("stronger kl weight shrinks the kl term") {
    ImageBatch data = tiny_corpus(8, 16, 7);
    auto run = [&](float beta) {
        VAETrainConfig cfg;
        cfg.epochs = 30;
        cfg.batch_size = 4;
        cfg.lr = 1e-3f;
        cfg.kl_weight = beta;
        cfg.seed = 9;
        Rng rng(9);
        VAEParams init(8, 8, 4, rng);
        std::vector<VAELosses> log;
        vae_train(cfg, data, &log, nullptr, &init);
        return log.back().kl;
    };
    CHECK(run(1.0f) < run(0.0f));
}

TEST_CASE("training is deterministic given the config") {
    ImageBatch data = tiny_corpus(4, 16, 8);
    VAETrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.seed = 17;
    auto run = [&] {
        Rng rng(17);
        VAEParams init(8, 8, 4, rng);
        return vae_train(cfg, data, nullptr, nullptr, &init);
    };
    VAEParams a = run();
    VAEParams b = run();
    CHECK(params_equal(a.params(), b.params()));
}

TEST_CASE("training rejects bad configs and reports divergence") {
    ImageBatch data = tiny_corpus(2, 16, 2);
    VAETrainConfig cfg;
    cfg.lr = 0.0f;
    CHECK_THROWS(vae_train(cfg, data));
    cfg.lr = 1e-3f;
    cfg.kl_weight = -1.0f;
    CHECK_THROWS(vae_train(cfg, data));
    cfg.kl_weight = 0.0f;
    cfg.lr = 1e6f;  // guaranteed blow-up
    cfg.epochs = 20;
    CHECK_THROWS_WITH_AS(vae_train(cfg, data), doctest::Contains("diverged"),
                         std::runtime_error);
}

TEST_CASE("trigger generation is deterministic and keeps ids") {
    ImageBatch data = tiny_corpus(3, 16, 12);
    Rng rng(3);
    VAEParams vae(8, 8, 4, rng);
    ImageBatch a = generate_trigger(vae, data);
    ImageBatch b = generate_trigger(vae, data);
    CHECK(a.data.data() == b.data.data());
    CHECK(a.ids == data.ids);
    // posterior sampling adds noise, mean mode does not
    ImageBatch s1 = generate_trigger(vae, data, true, 1);
    ImageBatch s2 = generate_trigger(vae, data, true, 2);
    CHECK(s1.data.data() != a.data.data());
    CHECK(s1.data.data() != s2.data.data());
}
