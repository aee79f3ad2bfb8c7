// gdcli: drive the protection pipeline end to end from the command line.
//
//   gdcli gen-data --config run.json
//   gdcli train-vae ... train-editor ... train-denoiser ... inject
//   gdcli protect [--input dir]
//   gdcli baseline-protect
//   gdcli attack --kind jpeg [--input dir]
//   gdcli edit [--input dir] [--clean-editor]
//   gdcli evaluate && gdcli report
//   gdcli visualize-residual
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "guarddoor/pipeline.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool out_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "run config JSON (defaults used when omitted)");
    cmd->add_option("--out", opts.out_dir, "output directory (overrides config)")
        ->each([&](const std::string&) { opts.out_set = true; });
    cmd->add_option("--seed", opts.seed, "global seed (overrides config)")
        ->each([&](const std::string&) { opts.seed_set = true; });
    cmd->add_option("--set", opts.overrides, "dotted config override, e.g. guard.alpha=0.25")
        ->take_all();
}

gd::RunConfig resolve(const CommonOpts& opts) {
    gd::RunConfig cfg =
        opts.config_path.empty() ? gd::RunConfig::defaults() : gd::RunConfig::load(opts.config_path);
    for (const auto& kv : opts.overrides) cfg.apply_override(kv);
    if (opts.seed_set) cfg.seed = opts.seed;
    if (opts.out_set) cfg.out_dir = opts.out_dir;
    cfg.derive_seeds();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"protective-trigger pipeline"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string attack_kind;
    std::string input_dir;
    bool clean_editor = false;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    auto* tvae = app.add_subcommand("train-vae", "train the trigger VAE and the purifier VAE");
    auto* tedit = app.add_subcommand("train-editor", "pretrain the surrogate editor");
    auto* tden = app.add_subcommand("train-denoiser", "train the latent denoiser");
    auto* inj = app.add_subcommand("inject", "fine-tune the editor encoder with the trigger objective");
    auto* prot = app.add_subcommand("protect", "apply the protective trigger to images");
    auto* bprot = app.add_subcommand("baseline-protect", "run adversarial-perturbation baselines");
    auto* atk = app.add_subcommand("attack", "apply one preprocessing attack to a directory");
    auto* ed = app.add_subcommand("edit", "run the editor over a directory of images");
    auto* eval = app.add_subcommand("evaluate", "full method x attack evaluation matrix");
    auto* rep = app.add_subcommand("report", "render the evaluation as a markdown table");
    auto* vis = app.add_subcommand("visualize-residual", "emit residual comparison panels");

    for (CLI::App* cmd : {gen, tvae, tedit, tden, inj, prot, bprot, atk, ed, eval, rep, vis})
        add_common(cmd, opts);
    prot->add_option("--input", input_dir, "PNG directory to protect (default: test split)");
    atk->add_option("--kind", attack_kind, "attack kind from the config attack list")->required();
    atk->add_option("--input", input_dir, "PNG directory to attack (default: protected/)");
    ed->add_option("--input", input_dir, "PNG directory to edit (default: protected/)");
    ed->add_flag("--clean-editor", clean_editor, "use the pre-injection editor");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        gd::RunConfig cfg = resolve(opts);
        std::ostream* log = &std::cerr;
        if (gen->parsed()) gd::step_gen_data(cfg, log);
        if (tvae->parsed()) gd::step_train_vae(cfg, log);
        if (tedit->parsed()) gd::step_train_editor(cfg, log);
        if (tden->parsed()) gd::step_train_denoiser(cfg, log);
        if (inj->parsed()) gd::step_inject(cfg, log);
        if (prot->parsed()) gd::step_protect(cfg, input_dir, log);
        if (bprot->parsed()) gd::step_baseline_protect(cfg, log);
        if (atk->parsed()) gd::step_attack(cfg, attack_kind, input_dir, log);
        if (ed->parsed()) gd::step_edit(cfg, input_dir, !clean_editor, log);
        if (eval->parsed()) gd::step_evaluate(cfg, log);
        if (rep->parsed()) gd::step_report(cfg, &std::cout);
        if (vis->parsed()) gd::step_visualize_residual(cfg, log);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
