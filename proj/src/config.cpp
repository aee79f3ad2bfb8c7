#include "guarddoor/config.hpp"

#include <fstream>
#include <sstream>

#include "guarddoor/checkpoint.hpp"
#include "json.hpp"

using nlohmann::json;

namespace gd {

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok)
            throw std::runtime_error("config: unknown key '" + where + "." + it.key() + "'");
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

json corpus_to_json(const CorpusSpec& c) {
    return {{"n_train", c.n_train}, {"n_test", c.n_test}, {"size", c.size},
            {"generator", c.generator}};
}

void corpus_from_json(const json& j, CorpusSpec& c) {
    check_keys(j, "corpus", {"n_train", "n_test", "size", "generator"});
    get_if(j, "n_train", c.n_train);
    get_if(j, "n_test", c.n_test);
    get_if(j, "size", c.size);
    get_if(j, "generator", c.generator);
}

json vae_train_to_json(const VAETrainConfig& c) {
    return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr},
            {"kl_weight", c.kl_weight}};
}

void vae_train_from_json(const json& j, const std::string& where, VAETrainConfig& c) {
    check_keys(j, where, {"epochs", "batch_size", "lr", "kl_weight"});
    get_if(j, "epochs", c.epochs);
    get_if(j, "batch_size", c.batch_size);
    get_if(j, "lr", c.lr);
    get_if(j, "kl_weight", c.kl_weight);
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.purifier_train.epochs = 20;
    c.attacks = {
        {"gaussian_noise", {{"sigma", 0.01}}, 0},
        {"gaussian_blur", {{"sigma", 1.0}}, 0},
        {"jpeg", {{"quality", 80.0}}, 0},
        {"resample", {{"factor", 2.0}}, 0},
        {"recon_purify", {}, 0},
        {"impress", {{"budget", 0.01}, {"steps", 10.0}, {"lr", 0.001}}, 0},
    };
    BaselineSpec pgd;
    BaselineSpec eot;
    eot.kind = "pgd_encoder_eot";
    c.baselines = {pgd, eot};
    c.derive_seeds();
    return c;
}

void RunConfig::derive_seeds() {
    corpus.seed = seed;
    vae_train.seed = seed + 1;
    purifier_train.seed = seed + 101;  // disjoint init from the trigger VAE
    editor_train.seed = seed + 2;
    denoiser_train.seed = seed + 3;
    guard.seed = seed + 4;
    edit.seed = seed + 5;
    for (std::size_t i = 0; i < attacks.size(); ++i) attacks[i].seed = seed + 200 + i;
    for (std::size_t i = 0; i < baselines.size(); ++i) baselines[i].seed = seed + 300 + i;
}

std::string RunConfig::to_json_text() const {
    json j;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["corpus"] = corpus_to_json(corpus);
    j["model"] = {{"c1", model.c1}, {"c2", model.c2}, {"latent_channels", model.latent_channels},
                  {"shared_init", model.shared_init}};
    j["vae_train"] = vae_train_to_json(vae_train);
    j["purifier_train"] = vae_train_to_json(purifier_train);
    j["editor_train"] = {{"epochs", editor_train.epochs}, {"batch_size", editor_train.batch_size},
                         {"lr", editor_train.lr}};
    j["denoiser_train"] = {{"T", denoiser_train.T}, {"epochs", denoiser_train.epochs},
                           {"batch_size", denoiser_train.batch_size}, {"lr", denoiser_train.lr},
                           {"hidden", denoiser_train.hidden}};
    j["guard"] = {{"alpha", guard.alpha},       {"lr", guard.lr},
                  {"epochs", guard.epochs},     {"batch_size", guard.batch_size},
                  {"optimizer", guard.optimizer}, {"target_kind", guard.target_kind},
                  {"stop_grad_target", guard.stop_grad_target},
                  {"detector_only", guard.detector_only}};
    j["edit"] = {{"strength", edit.strength}, {"num_steps", edit.num_steps}};
    j["attacks"] = json::array();
    for (const auto& a : attacks) j["attacks"].push_back({{"kind", a.kind}, {"params", a.params}});
    j["baselines"] = json::array();
    for (const auto& b : baselines)
        j["baselines"].push_back({{"kind", b.kind},
                                  {"epsilon", b.epsilon},
                                  {"steps", b.steps},
                                  {"step_size", b.step_size},
                                  {"eot_samples", b.eot_samples},
                                  {"eot_blur_sigma", b.eot_blur_sigma}});
    return j.dump(2);
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j = json::parse(text);
    check_keys(j, "", {"seed", "out_dir", "corpus", "model", "vae_train", "purifier_train",
                       "editor_train", "denoiser_train", "guard", "edit", "attacks", "baselines"});
    RunConfig c = defaults();
    get_if(j, "seed", c.seed);
    get_if(j, "out_dir", c.out_dir);
    if (j.contains("corpus")) corpus_from_json(j.at("corpus"), c.corpus);
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, "model", {"c1", "c2", "latent_channels", "shared_init"});
        get_if(m, "c1", c.model.c1);
        get_if(m, "c2", c.model.c2);
        get_if(m, "latent_channels", c.model.latent_channels);
        get_if(m, "shared_init", c.model.shared_init);
    }
    if (j.contains("vae_train")) vae_train_from_json(j.at("vae_train"), "vae_train", c.vae_train);
    if (j.contains("purifier_train"))
        vae_train_from_json(j.at("purifier_train"), "purifier_train", c.purifier_train);
    if (j.contains("editor_train")) {
        const json& m = j.at("editor_train");
        check_keys(m, "editor_train", {"epochs", "batch_size", "lr"});
        get_if(m, "epochs", c.editor_train.epochs);
        get_if(m, "batch_size", c.editor_train.batch_size);
        get_if(m, "lr", c.editor_train.lr);
    }
    if (j.contains("denoiser_train")) {
        const json& m = j.at("denoiser_train");
        check_keys(m, "denoiser_train", {"T", "epochs", "batch_size", "lr", "hidden"});
        get_if(m, "T", c.denoiser_train.T);
        get_if(m, "epochs", c.denoiser_train.epochs);
        get_if(m, "batch_size", c.denoiser_train.batch_size);
        get_if(m, "lr", c.denoiser_train.lr);
        get_if(m, "hidden", c.denoiser_train.hidden);
    }
    if (j.contains("guard")) {
        const json& m = j.at("guard");
        check_keys(m, "guard", {"alpha", "lr", "epochs", "batch_size", "optimizer", "target_kind",
                                "stop_grad_target", "detector_only"});
        get_if(m, "alpha", c.guard.alpha);
        get_if(m, "lr", c.guard.lr);
        get_if(m, "epochs", c.guard.epochs);
        get_if(m, "batch_size", c.guard.batch_size);
        get_if(m, "optimizer", c.guard.optimizer);
        get_if(m, "target_kind", c.guard.target_kind);
        get_if(m, "stop_grad_target", c.guard.stop_grad_target);
        get_if(m, "detector_only", c.guard.detector_only);
    }
    if (j.contains("edit")) {
        const json& m = j.at("edit");
        check_keys(m, "edit", {"strength", "num_steps"});
        get_if(m, "strength", c.edit.strength);
        get_if(m, "num_steps", c.edit.num_steps);
    }
    if (j.contains("attacks")) {
        c.attacks.clear();
        for (const auto& a : j.at("attacks")) {
            check_keys(a, "attacks[]", {"kind", "params"});
            AttackSpec spec;
            spec.kind = a.at("kind").get<std::string>();
            if (a.contains("params"))
                spec.params = a.at("params").get<std::map<std::string, double>>();
            spec.validate();
            c.attacks.push_back(std::move(spec));
        }
    }
    if (j.contains("baselines")) {
        c.baselines.clear();
        for (const auto& b : j.at("baselines")) {
            check_keys(b, "baselines[]",
                       {"kind", "epsilon", "steps", "step_size", "eot_samples", "eot_blur_sigma"});
            BaselineSpec spec;
            get_if(b, "kind", spec.kind);
            get_if(b, "epsilon", spec.epsilon);
            get_if(b, "steps", spec.steps);
            get_if(b, "step_size", spec.step_size);
            get_if(b, "eot_samples", spec.eot_samples);
            get_if(b, "eot_blur_sigma", spec.eot_blur_sigma);
            if (spec.epsilon <= 0.0f) throw std::runtime_error("config: baseline epsilon must be > 0");
            if (spec.steps < 1) throw std::runtime_error("config: baseline steps must be >= 1");
            c.baselines.push_back(spec);
        }
    }
    c.derive_seeds();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_json_text(ss.str());
}

void RunConfig::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write config " + path);
    f << to_json_text() << "\n";
}

void RunConfig::apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw std::runtime_error("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);

    json j = json::parse(to_json_text());
    json* node = &j;
    std::size_t pos = 0;
    std::string last;
    while (true) {
        const auto dot = key.find('.', pos);
        const std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (dot == std::string::npos) {
            last = part;
            break;
        }
        if (node->is_array()) {
            const std::size_t idx = std::stoul(part);
            if (idx >= node->size())
                throw std::runtime_error("--set: index " + part + " out of range in '" + key + "'");
            node = &(*node)[idx];
        } else if (node->contains(part)) {
            node = &(*node)[part];
        } else {
            throw std::runtime_error("--set: unknown config section '" + part + "'");
        }
        pos = dot + 1;
    }
    if (!node->contains(last)) throw std::runtime_error("--set: unknown config key '" + key + "'");
    // parse value with the type of the existing entry
    json& slot = (*node)[last];
    if (slot.is_string())
        slot = value;
    else if (slot.is_boolean())
        slot = (value == "true" || value == "1");
    else if (slot.is_number_integer() || slot.is_number_unsigned())
        slot = std::stoll(value);
    else
        slot = std::stod(value);
    *this = from_json_text(j.dump());
}

std::uint64_t RunConfig::hash() const {
    const std::string text = to_json_text();
    return fnv1a64(reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

}  // namespace gd
