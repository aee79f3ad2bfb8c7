#include "doctest.h"
#include "guarddoor/config.hpp"

using namespace gd;

TEST_CASE("defaults include the full attack and baseline suite") {
    RunConfig cfg = RunConfig::defaults();
    REQUIRE(cfg.attacks.size() == 6);
    CHECK(cfg.attacks[0].kind == "gaussian_noise");
    CHECK(cfg.attacks[2].kind == "jpeg");
    CHECK(cfg.attacks[2].param("quality", 0.0) == 80.0);
    CHECK(cfg.attacks[5].kind == "impress");
    REQUIRE(cfg.baselines.size() == 2);
    CHECK(cfg.baselines[0].kind == "pgd_encoder");
    CHECK(cfg.baselines[1].kind == "pgd_encoder_eot");
    CHECK(cfg.guard.alpha == 0.5f);
    CHECK(cfg.guard.lr == doctest::Approx(1e-5));
    CHECK(cfg.guard.epochs == 30);
    CHECK(cfg.edit.strength == doctest::Approx(0.3));
}

TEST_CASE("serialize then parse round-trips losslessly") {
    RunConfig cfg = RunConfig::defaults();
    cfg.seed = 99;
    cfg.corpus.n_train = 17;
    cfg.guard.alpha = 0.75f;
    cfg.derive_seeds();
    RunConfig back = RunConfig::from_json_text(cfg.to_json_text());
    CHECK(back.to_json_text() == cfg.to_json_text());
    CHECK(back.seed == 99);
    CHECK(back.corpus.n_train == 17);
    CHECK(back.guard.alpha == 0.75f);
}

TEST_CASE("unknown keys are rejected at every level") {
    CHECK_THROWS_WITH_AS(RunConfig::from_json_text(R"({"sneaky": 1})"),
                         doctest::Contains("unknown key"), std::runtime_error);
    CHECK_THROWS_WITH_AS(RunConfig::from_json_text(R"({"guard": {"aplha": 0.5}})"),
                         doctest::Contains("guard.aplha"), std::runtime_error);
    CHECK_THROWS_WITH_AS(RunConfig::from_json_text(R"({"corpus": {"n": 4}})"),
                         doctest::Contains("corpus.n"), std::runtime_error);
    CHECK_THROWS(RunConfig::from_json_text(R"({"attacks": [{"kind": "jpeg", "strength": 2}]})"));
    CHECK_THROWS(RunConfig::from_json_text("{not json"));
}

TEST_CASE("partial configs inherit defaults") {
    RunConfig cfg = RunConfig::from_json_text(R"({"seed": 3, "guard": {"alpha": 0.1}})");
    CHECK(cfg.seed == 3);
    CHECK(cfg.guard.alpha == doctest::Approx(0.1));
    CHECK(cfg.guard.epochs == 30);       // untouched default
    CHECK(cfg.attacks.size() == 6);      // default attack suite
    CHECK(cfg.vae_train.seed == 4);      // derived from the new seed
}

TEST_CASE("attack specs parse and validate from json") {
    RunConfig cfg = RunConfig::from_json_text(
        R"({"attacks": [{"kind": "jpeg", "params": {"quality": 40}}]})");
    REQUIRE(cfg.attacks.size() == 1);
    CHECK(cfg.attacks[0].param("quality", 0.0) == 40.0);
    CHECK_THROWS(RunConfig::from_json_text(
        R"({"attacks": [{"kind": "jpeg", "params": {"quality": 300}}]})"));
    CHECK_THROWS(RunConfig::from_json_text(R"({"attacks": [{"kind": "meteor"}]})"));
    CHECK_THROWS(RunConfig::from_json_text(R"({"baselines": [{"kind": "pgd_encoder", "steps": 0}]})"));
}

TEST_CASE("dotted overrides update scalars with type checking") {
    RunConfig cfg = RunConfig::defaults();
    cfg.apply_override("guard.alpha=0.25");
    CHECK(cfg.guard.alpha == doctest::Approx(0.25));
    cfg.apply_override("corpus.n_train=64");
    CHECK(cfg.corpus.n_train == 64);
    cfg.apply_override("corpus.generator=gradients_mix");
    CHECK(cfg.corpus.generator == "gradients_mix");
    cfg.apply_override("guard.stop_grad_target=false");
    CHECK_FALSE(cfg.guard.stop_grad_target);
    cfg.apply_override("attacks.2.params.quality=55");
    CHECK(cfg.attacks[2].param("quality", 0.0) == 55.0);
    cfg.apply_override("baselines.1.steps=7");
    CHECK(cfg.baselines[1].steps == 7);

    CHECK_THROWS(cfg.apply_override("no_equals_sign"));
    CHECK_THROWS(cfg.apply_override("guard.bogus=1"));
    CHECK_THROWS(cfg.apply_override("nowhere.alpha=1"));
    CHECK_THROWS(cfg.apply_override("attacks.9.params.quality=1"));
}

TEST_CASE("module seeds are derived from the global seed") {
    RunConfig cfg = RunConfig::defaults();
    cfg.seed = 100;
    cfg.derive_seeds();
    CHECK(cfg.corpus.seed == 100);
    CHECK(cfg.vae_train.seed == 101);
    CHECK(cfg.purifier_train.seed != cfg.vae_train.seed);
    CHECK(cfg.guard.seed == 104);
    CHECK(cfg.attacks[0].seed != cfg.attacks[1].seed);
    CHECK(cfg.baselines[0].seed != cfg.baselines[1].seed);
}

TEST_CASE("config hash tracks content") {
    RunConfig a = RunConfig::defaults();
    RunConfig b = RunConfig::defaults();
    CHECK(a.hash() == b.hash());
    b.guard.alpha = 0.9f;
    CHECK(a.hash() != b.hash());
}
