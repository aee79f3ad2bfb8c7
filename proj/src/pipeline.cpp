#include "guarddoor/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "guarddoor/attacks.hpp"
#include "guarddoor/guard.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gd {

namespace {

std::string join(const std::string& a, const std::string& b) {
    return (fs::path(a) / b).string();
}

void write_text(const std::string& path, const std::string& text) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
}

std::string read_text(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string hex64(std::uint64_t v) {
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << v;
    return ss.str();
}

void require_artifact(const std::string& path, const std::string& producer) {
    if (!fs::exists(path))
        throw std::runtime_error("missing artifact " + path + "; run `" + producer + "` first");
}

std::string losses_csv(const std::vector<VAELosses>& log) {
    std::ostringstream ss;
    ss << "epoch,loss_total,loss_recon,loss_kl\n";
    for (std::size_t i = 0; i < log.size(); ++i)
        ss << i + 1 << "," << log[i].total << "," << log[i].recon << "," << log[i].kl << "\n";
    return ss.str();
}

std::string scalar_csv(const std::vector<double>& log) {
    std::ostringstream ss;
    ss << "epoch,loss\n";
    for (std::size_t i = 0; i < log.size(); ++i) ss << i + 1 << "," << log[i] << "\n";
    return ss.str();
}

// resolved config plus hashes of whichever checkpoints exist so far
void write_provenance(const RunConfig& cfg, const PipelinePaths& p) {
    json j;
    j["config_hash"] = hex64(cfg.hash());
    j["config"] = json::parse(cfg.to_json_text());
    json cks = json::object();
    for (const std::string& path : {p.vae_ck, p.purifier_ck, p.editor_ck, p.editor_injected_ck,
                                    p.denoiser_ck})
        if (fs::exists(path)) cks[fs::path(path).filename().string()] = hex64(checkpoint_file_hash(path));
    j["checkpoints"] = cks;
    write_text(p.provenance, j.dump(2) + "\n");
}

void save_resolved_config(const RunConfig& cfg, const PipelinePaths& p) {
    fs::create_directories(p.root);
    cfg.save(p.resolved_config);
    write_provenance(cfg, p);
}

Rng model_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace

PipelinePaths::PipelinePaths(const std::string& out_dir) : root(out_dir) {
    resolved_config = join(root, "config.resolved.json");
    corpus_manifest = join(root, "corpus/manifest.json");
    corpus_train_dir = join(root, "corpus/train");
    corpus_test_dir = join(root, "corpus/test");
    vae_ck = join(root, "checkpoints/vae.gdck");
    purifier_ck = join(root, "checkpoints/purifier.gdck");
    editor_ck = join(root, "checkpoints/editor.gdck");
    editor_injected_ck = join(root, "checkpoints/editor_injected.gdck");
    denoiser_ck = join(root, "checkpoints/denoiser.gdck");
    vae_log = join(root, "logs/vae_train.csv");
    purifier_log = join(root, "logs/purifier_train.csv");
    editor_log = join(root, "logs/editor_train.csv");
    denoiser_log = join(root, "logs/denoiser_train.csv");
    guard_log = join(root, "logs/guard_train.csv");
    protected_dir = join(root, "protected");
    baseline_dir = join(root, "baseline");
    attacked_dir = join(root, "attacked");
    edited_dir = join(root, "edited");
    residual_dir = join(root, "residuals");
    report_csv = join(root, "report.csv");
    report_json = join(root, "report.json");
    report_md = join(root, "report.md");
    provenance = join(root, "provenance.json");
}

Corpus load_corpus_from_manifest(const std::string& manifest_path) {
    json j = json::parse(read_text(manifest_path));
    CorpusSpec spec;
    spec.n_train = j.at("n_train").get<int>();
    spec.n_test = j.at("n_test").get<int>();
    spec.size = j.at("size").get<int>();
    spec.generator = j.at("generator").get<std::string>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    return generate_corpus(spec);
}

void step_gen_data(const RunConfig& cfg, std::ostream* progress) {
    PipelinePaths p(cfg.out_dir);
    save_resolved_config(cfg, p);
    Corpus corpus = generate_corpus(cfg.corpus);

    fs::create_directories(p.corpus_train_dir);
    fs::create_directories(p.corpus_test_dir);
    save_batch_pngs(p.corpus_train_dir, corpus.train);
    save_batch_pngs(p.corpus_test_dir, corpus.test);

    json manifest{{"n_train", cfg.corpus.n_train}, {"n_test", cfg.corpus.n_test},
                  {"size", cfg.corpus.size},       {"generator", cfg.corpus.generator},
                  {"seed", cfg.corpus.seed}};
    json ids = json::array();
    for (const auto& id : corpus.train.ids) ids.push_back(id);
    manifest["train_ids"] = ids;
    ids = json::array();
    for (const auto& id : corpus.test.ids) ids.push_back(id);
    manifest["test_ids"] = ids;
    write_text(p.corpus_manifest, manifest.dump(2) + "\n");
    if (progress)
        *progress << "gen-data: wrote " << corpus.train.size() << " train / " << corpus.test.size()
                  << " test images to " << p.root << "/corpus\n";
}

void step_train_vae(const RunConfig& cfg, std::ostream* progress) {
    PipelinePaths p(cfg.out_dir);
    require_artifact(p.corpus_manifest, "gen-data");
    Corpus corpus = load_corpus_from_manifest(p.corpus_manifest);

    Rng rng = model_rng(cfg.vae_train.seed);
    VAEParams init(cfg.model.c1, cfg.model.c2, cfg.model.latent_channels, rng);
    std::vector<VAELosses> log;
    VAEParams vae = vae_train(cfg.vae_train, corpus.train, &log, progress, &init);
    checkpoint_from_vae(vae, "vae").save(p.vae_ck);
    write_text(p.vae_log, losses_csv(log));

    Rng prng = model_rng(cfg.purifier_train.seed);
    VAEParams pinit(cfg.model.c1, cfg.model.c2, cfg.model.latent_channels, prng);
    std::vector<VAELosses> plog;
    VAEParams purifier = vae_train(cfg.purifier_train, corpus.train, &plog, progress, &pinit);
    checkpoint_from_vae(purifier, "purifier").save(p.purifier_ck);
    write_text(p.purifier_log, losses_csv(plog));
    write_provenance(cfg, p);
    if (progress)
        *progress << "train-vae: saved " << p.vae_ck << " and " << p.purifier_ck << "\n";
}

void step_train_editor(const RunConfig& cfg, std::ostream* progress) {
    PipelinePaths p(cfg.out_dir);
    require_artifact(p.corpus_manifest, "gen-data");
    require_artifact(p.vae_ck, "train-vae");
    Corpus corpus = load_corpus_from_manifest(p.corpus_manifest);
    VAEParams vae = vae_from_checkpoint(Checkpoint::load(p.vae_ck));

    EditorTrainConfig tc = cfg.editor_train;
    tc.shared_init = cfg.model.shared_init;
    tc.target_kind = cfg.guard.target_kind;
    tc.target_seed = cfg.guard.seed;
    VAEParams purifier;
    const bool have_purifier = fs::exists(p.purifier_ck);
    if (have_purifier) purifier = vae_from_checkpoint(Checkpoint::load(p.purifier_ck));
    std::vector<double> log;
    EditorParams editor =
        editor_pretrain(corpus.train, tc, tc.shared_init ? &vae : nullptr, &log, progress,
                        have_purifier ? &purifier : nullptr);
    checkpoint_from_editor(editor).save(p.editor_ck);
    write_text(p.editor_log, scalar_csv(log));
    write_provenance(cfg, p);
    if (progress) *progress << "train-editor: saved " << p.editor_ck << "\n";
}

void step_train_denoiser(const RunConfig& cfg, std::ostream* progress) {
    PipelinePaths p(cfg.out_dir);
    require_artifact(p.corpus_manifest, "gen-data");
    require_artifact(p.editor_ck, "train-editor");
    Corpus corpus = load_corpus_from_manifest(p.corpus_manifest);
    EditorParams editor = editor_from_checkpoint(Checkpoint::load(p.editor_ck));

    DenoiserTrainConfig dc = cfg.denoiser_train;
    dc.target_kind = cfg.guard.target_kind;
    dc.target_seed = cfg.guard.seed;
    std::vector<double> log;
    DenoiserParams den = denoiser_train(editor, corpus.train, dc, &log, progress);
    checkpoint_from_denoiser(den).save(p.denoiser_ck);
    write_text(p.denoiser_log, scalar_csv(log));
    write_provenance(cfg, p);
    if (progress) *progress << "train-denoiser: saved " << p.denoiser_ck << "\n";
}

void step_inject(const RunConfig& cfg, std::ostream* progress) {
    PipelinePaths p(cfg.out_dir);
    require_artifact(p.corpus_manifest, "gen-data");
    require_artifact(p.vae_ck, "train-vae");
    require_artifact(p.editor_ck, "train-editor");
    Corpus corpus = load_corpus_from_manifest(p.corpus_manifest);
    VAEParams vae = vae_from_checkpoint(Checkpoint::load(p.vae_ck));
    EditorParams editor = editor_from_checkpoint(Checkpoint::load(p.editor_ck));
    if (editor.latent_channels != vae.latent_channels)
        throw std::runtime_error("latent dim mismatch: editor has " +
                                 std::to_string(editor.latent_channels) + " channels, vae has " +
                                 std::to_string(vae.latent_channels));

    auto log = inject_backdoor(editor, vae, corpus.train, cfg.guard, progress);
    checkpoint_from_editor(editor).save(p.editor_injected_ck);
    write_text(p.guard_log, guard_log_csv(log));
    write_provenance(cfg, p);
    if (progress) *progress << "inject: saved " << p.editor_injected_ck << "\n";
}

void step_protect(const RunConfig& cfg, const std::string& input_dir, std::ostream* progress) {
    PipelinePaths p(cfg.out_dir);
    require_artifact(p.vae_ck, "train-vae");
    VAEParams vae = vae_from_checkpoint(Checkpoint::load(p.vae_ck));

    ImageBatch images;
    if (!input_dir.empty()) {
        images = load_png_dir(input_dir, cfg.corpus.size);
    } else {
        require_artifact(p.corpus_manifest, "gen-data");
        images = load_corpus_from_manifest(p.corpus_manifest).test;
    }
    ImageBatch prot = protect(vae, images);
    fs::create_directories(p.protected_dir);
    save_batch_pngs(p.protected_dir, prot);
    write_provenance(cfg, p);
    if (progress)
        *progress << "protect: wrote " << prot.size() << " images to " << p.protected_dir << "\n";
}

void step_baseline_protect(const RunConfig& cfg, std::ostream* progress) {
    PipelinePaths p(cfg.out_dir);
    require_artifact(p.corpus_manifest, "gen-data");
    require_artifact(p.editor_ck, "train-editor");
    Corpus corpus = load_corpus_from_manifest(p.corpus_manifest);
    EditorParams editor = editor_from_checkpoint(Checkpoint::load(p.editor_ck));
    TargetImage tar = TargetImage::make(cfg.guard.target_kind, corpus.test.height(),
                                        corpus.test.width(), cfg.guard.seed);

    for (const BaselineSpec& spec : cfg.baselines) {
        const Tensor x_tar = tar.broadcast(corpus.test.size());
        Tensor adv = pgd_encoder_baseline(editor, corpus.test.data, spec, x_tar);
        ImageBatch batch(adv, corpus.test.ids);
        const std::string dir = join(p.baseline_dir, spec.kind);
        fs::create_directories(dir);
        save_batch_pngs(dir, batch);
        if (progress)
            *progress << "baseline-protect: " << spec.kind << " -> " << dir << "\n";
    }
    write_provenance(cfg, p);
}

void step_attack(const RunConfig& cfg, const std::string& attack_kind,
                 const std::string& input_dir, std::ostream* progress) {
    PipelinePaths p(cfg.out_dir);
    const AttackSpec* spec = nullptr;
    for (const auto& a : cfg.attacks)
        if (a.kind == attack_kind) spec = &a;
    if (!spec)
        throw std::runtime_error("attack '" + attack_kind + "' is not in the configured attack list");

    VAEParams vae, purifier;
    AttackContext ctx;
    if (spec->kind == "impress") {
        require_artifact(p.vae_ck, "train-vae");
        vae = vae_from_checkpoint(Checkpoint::load(p.vae_ck));
        ctx.vae_pub = &vae;
    }
    if (spec->kind == "recon_purify") {
        require_artifact(p.purifier_ck, "train-vae");
        purifier = vae_from_checkpoint(Checkpoint::load(p.purifier_ck));
        ctx.purifier = &purifier;
    }

    std::string src = input_dir.empty() ? p.protected_dir : input_dir;
    require_artifact(src, input_dir.empty() ? "protect" : "attack");
    ImageBatch images = load_png_dir(src, cfg.corpus.size);
    ImageBatch attacked(apply_attack(*spec, images.data, ctx), images.ids);
    const std::string dir = join(p.attacked_dir, attack_kind);
    fs::create_directories(dir);
    save_batch_pngs(dir, attacked);
    write_provenance(cfg, p);
    if (progress)
        *progress << "attack: " << attack_kind << " on " << images.size() << " images -> " << dir
                  << "\n";
}

void step_edit(const RunConfig& cfg, const std::string& input_dir, bool use_injected,
               std::ostream* progress) {
    PipelinePaths p(cfg.out_dir);
    const std::string editor_path = use_injected ? p.editor_injected_ck : p.editor_ck;
    require_artifact(editor_path, use_injected ? "inject" : "train-editor");
    require_artifact(p.denoiser_ck, "train-denoiser");
    EditorParams editor = editor_from_checkpoint(Checkpoint::load(editor_path));
    DenoiserParams den = denoiser_from_checkpoint(Checkpoint::load(p.denoiser_ck));

    std::string src = input_dir.empty() ? p.protected_dir : input_dir;
    require_artifact(src, "protect");
    ImageBatch images = load_png_dir(src, cfg.corpus.size);
    ImageBatch out = edit(editor, den, images, cfg.edit);
    const std::string dir = join(p.edited_dir, use_injected ? "injected" : "clean");
    fs::create_directories(dir);
    save_batch_pngs(dir, out);
    write_provenance(cfg, p);
    if (progress)
        *progress << "edit: " << (use_injected ? "injected" : "clean") << " editor on "
                  << images.size() << " images -> " << dir << "\n";
}

PipelineContext PipelineContext::load(const RunConfig& cfg) {
    PipelinePaths p(cfg.out_dir);
    require_artifact(p.corpus_manifest, "gen-data");
    require_artifact(p.vae_ck, "train-vae");
    require_artifact(p.purifier_ck, "train-vae");
    require_artifact(p.editor_ck, "train-editor");
    require_artifact(p.editor_injected_ck, "inject");
    require_artifact(p.denoiser_ck, "train-denoiser");

    PipelineContext ctx;
    ctx.corpus = load_corpus_from_manifest(p.corpus_manifest);
    ctx.vae = vae_from_checkpoint(Checkpoint::load(p.vae_ck));
    ctx.purifier = vae_from_checkpoint(Checkpoint::load(p.purifier_ck));
    ctx.editor_clean = editor_from_checkpoint(Checkpoint::load(p.editor_ck));
    ctx.editor_injected = editor_from_checkpoint(Checkpoint::load(p.editor_injected_ck));
    ctx.denoiser = denoiser_from_checkpoint(Checkpoint::load(p.denoiser_ck));

    if (ctx.editor_clean.latent_channels != ctx.denoiser.latent_channels)
        throw std::runtime_error("latent dim mismatch: editor has " +
                                 std::to_string(ctx.editor_clean.latent_channels) +
                                 " channels, denoiser expects " +
                                 std::to_string(ctx.denoiser.latent_channels));
    if (ctx.editor_clean.latent_channels != ctx.editor_injected.latent_channels)
        throw std::runtime_error("latent dim mismatch between clean and injected editors");
    return ctx;
}

EvalReport evaluate_matrix(const RunConfig& cfg, std::ostream* progress) {
    PipelineContext ctx = PipelineContext::load(cfg);
    const ImageBatch& test = ctx.corpus.test;
    TargetImage tar =
        TargetImage::make(cfg.guard.target_kind, test.height(), test.width(), cfg.guard.seed);
    const Tensor x_tar = tar.broadcast(test.size());

    AttackContext attack_ctx;
    attack_ctx.vae_pub = &ctx.vae;
    attack_ctx.purifier = &ctx.purifier;

    struct Method {
        std::string name;
        const EditorParams* editor;
        Tensor images;  // protected variant of the test set
    };
    std::vector<Method> methods;
    methods.push_back({"none", &ctx.editor_clean, test.data.clone()});
    for (const BaselineSpec& spec : cfg.baselines) {
        if (progress) *progress << "evaluate: running " << spec.kind << " baseline...\n";
        methods.push_back({spec.kind, &ctx.editor_clean,
                           pgd_encoder_baseline(ctx.editor_clean, test.data, spec, x_tar)});
    }
    methods.push_back(
        {"guarddoor", &ctx.editor_injected, protect(ctx.vae, test).data});

    EvalReport report;
    report.metadata["seed"] = std::to_string(cfg.seed);
    report.metadata["config_hash"] = hex64(cfg.hash());
    report.metadata["dataset"] = "synthetic:" + cfg.corpus.generator + ":" +
                                 std::to_string(cfg.corpus.size) + "px:seed" +
                                 std::to_string(cfg.corpus.seed);
    report.metadata["n_test"] = std::to_string(test.size());
    report.metadata["edit_strength"] = std::to_string(cfg.edit.strength);

    std::vector<AttackSpec> attacks;
    attacks.push_back({"none", {}, 0});
    for (const auto& a : cfg.attacks) attacks.push_back(a);

    for (const Method& m : methods) {
        // reference edit of the untouched test set under this method's editor
        Tensor edited_clean;
        try {
            edited_clean = edit(*m.editor, ctx.denoiser, test, cfg.edit).data;
        } catch (const std::exception& e) {
            for (const auto& a : attacks) {
                EvalRow row{m.name, a.kind, {}, std::string("reference edit failed: ") + e.what()};
                report.rows.push_back(std::move(row));
            }
            continue;
        }
        for (const AttackSpec& a : attacks) {
            EvalRow row{m.name, a.kind, {}, std::nullopt};
            try {
                Tensor attacked =
                    a.kind == "none" ? m.images : apply_attack(a, m.images, attack_ctx);
                ImageBatch attacked_batch(attacked, test.ids);
                Tensor edited = edit(*m.editor, ctx.denoiser, attacked_batch, cfg.edit).data;
                row.metrics["ssim"] = ssim(edited, edited_clean);
                row.metrics["psnr"] = psnr(edited, edited_clean);
                row.metrics["mse"] = mse_value(edited, edited_clean);
                row.metrics["latent_l2"] = latent_l2(*m.editor, attacked, test.data);
                row.metrics["mse_target"] = mse_value(edited, x_tar);
                row.metrics["protect_score"] = protect_score(edited, edited_clean, x_tar);
                row.metrics["input_psnr"] = psnr(m.images, test.data);
            } catch (const std::exception& e) {
                row.skipped = e.what();
            }
            if (progress) {
                *progress << "evaluate: " << m.name << " x " << a.kind;
                if (row.skipped)
                    *progress << " SKIPPED (" << *row.skipped << ")";
                else
                    *progress << " protect_score=" << row.metrics["protect_score"];
                *progress << "\n";
            }
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

void step_evaluate(const RunConfig& cfg, std::ostream* progress) {
    PipelinePaths p(cfg.out_dir);
    EvalReport report = evaluate_matrix(cfg, progress);
    write_text(p.report_csv, report.to_csv());
    write_text(p.report_json, report.to_json());
    write_provenance(cfg, p);
    if (progress)
        *progress << "evaluate: wrote " << p.report_csv << " and " << p.report_json << "\n";
}

std::string render_report_markdown(const EvalReport& report) {
    // column order: attacks as first encountered; rows: methods as first encountered
    std::vector<std::string> methods, attacks;
    for (const auto& r : report.rows) {
        bool seen = false;
        for (const auto& m : methods) seen = seen || m == r.method;
        if (!seen) methods.push_back(r.method);
        seen = false;
        for (const auto& a : attacks) seen = seen || a == r.attack;
        if (!seen) attacks.push_back(r.attack);
    }
    std::ostringstream ss;
    ss << "# Protection robustness report\n\n";
    for (const auto& [k, v] : report.metadata) ss << "- " << k << ": " << v << "\n";
    ss << "\nEach cell: protect_score (SSIM of the edited result vs the clean-edit "
          "reference). Higher protect_score / lower SSIM means the edit was more "
          "strongly disrupted.\n\n";
    ss << "| method |";
    for (const auto& a : attacks) ss << " " << a << " |";
    ss << "\n|---|";
    for (std::size_t i = 0; i < attacks.size(); ++i) ss << "---|";
    ss << "\n";
    ss << std::fixed << std::setprecision(3);
    for (const auto& m : methods) {
        ss << "| " << m << " |";
        for (const auto& a : attacks) {
            const EvalRow* row = report.find(m, a);
            if (!row) {
                ss << " - |";
            } else if (row->skipped) {
                ss << " skipped |";
            } else {
                ss << " " << row->metrics.at("protect_score") << " ("
                   << row->metrics.at("ssim") << ") |";
            }
        }
        ss << "\n";
    }
    ss << "\n";
    return ss.str();
}

void step_report(const RunConfig& cfg, std::ostream* out_stream) {
    PipelinePaths p(cfg.out_dir);
    require_artifact(p.report_json, "evaluate");
    EvalReport report = EvalReport::from_json(read_text(p.report_json));
    const std::string md = render_report_markdown(report);
    write_text(p.report_md, md);
    if (out_stream) *out_stream << md;
}

void step_visualize_residual(const RunConfig& cfg, std::ostream* progress) {
    PipelinePaths p(cfg.out_dir);
    require_artifact(p.corpus_manifest, "gen-data");
    require_artifact(p.vae_ck, "train-vae");
    Corpus corpus = load_corpus_from_manifest(p.corpus_manifest);
    VAEParams vae = vae_from_checkpoint(Checkpoint::load(p.vae_ck));

    const int n = std::min(4, corpus.test.size());
    ImageBatch sample = corpus.test.slice(0, n);
    ImageBatch prot = protect(vae, sample);

    // survival panel: the same residual after the first configured attack
    AttackSpec survive{"jpeg", {{"quality", 80.0}}, cfg.seed + 900};
    if (!cfg.attacks.empty()) survive = cfg.attacks.front();
    VAEParams purifier;
    AttackContext ctx;
    ctx.vae_pub = &vae;
    if (survive.kind == "recon_purify") {
        require_artifact(p.purifier_ck, "train-vae");
        purifier = vae_from_checkpoint(Checkpoint::load(p.purifier_ck));
        ctx.purifier = &purifier;
    }
    Tensor attacked = apply_attack(survive, prot.data, ctx);

    auto amp_residual = [](const Tensor& a, const Tensor& b) {
        const auto& da = a.data();
        const auto& db = b.data();
        std::vector<float> out(da.size());
        for (std::size_t i = 0; i < da.size(); ++i) {
            float v = 10.0f * std::fabs(da[i] - db[i]);
            out[i] = v > 1.0f ? 1.0f : v;
        }
        return Tensor::from_data(Shape(a.shape()), std::move(out));
    };
    Tensor residual = amp_residual(prot.data, sample.data);
    Tensor residual_after = amp_residual(attacked, sample.data);

    fs::create_directories(p.residual_dir);
    for (int i = 0; i < n; ++i) {
        const std::string& id = sample.ids[i];
        save_png(join(p.residual_dir, id + "_orig.png"), sample.data, i);
        save_png(join(p.residual_dir, id + "_protected.png"), prot.data, i);
        save_png(join(p.residual_dir, id + "_residual_x10.png"), residual, i);
        save_png(join(p.residual_dir, id + "_residual_after_" + survive.kind + ".png"),
                 residual_after, i);
    }
    write_provenance(cfg, p);
    if (progress)
        *progress << "visualize-residual: wrote " << 4 * n << " panels to " << p.residual_dir
                  << "\n";
}

}  // namespace gd
