#pragma once

#include <iosfwd>
#include <string>

#include "guarddoor/checkpoint.hpp"
#include "guarddoor/config.hpp"
#include "guarddoor/metrics.hpp"

namespace gd {

// canonical artifact locations under cfg.out_dir
struct PipelinePaths {
    std::string root;
    explicit PipelinePaths(const std::string& out_dir);

    std::string resolved_config;
    std::string corpus_manifest;
    std::string corpus_train_dir;
    std::string corpus_test_dir;
    std::string vae_ck, purifier_ck, editor_ck, editor_injected_ck, denoiser_ck;
    std::string vae_log, purifier_log, editor_log, denoiser_log, guard_log;
    std::string protected_dir, baseline_dir, attacked_dir, edited_dir, residual_dir;
    std::string report_csv, report_json, report_md, provenance;
};

void step_gen_data(const RunConfig& cfg, std::ostream* progress = nullptr);
void step_train_vae(const RunConfig& cfg, std::ostream* progress = nullptr);
void step_train_editor(const RunConfig& cfg, std::ostream* progress = nullptr);
void step_train_denoiser(const RunConfig& cfg, std::ostream* progress = nullptr);
void step_inject(const RunConfig& cfg, std::ostream* progress = nullptr);

// protect the held-out test split (or a user-provided PNG directory)
void step_protect(const RunConfig& cfg, const std::string& input_dir = "",
                  std::ostream* progress = nullptr);
void step_baseline_protect(const RunConfig& cfg, std::ostream* progress = nullptr);
void step_attack(const RunConfig& cfg, const std::string& attack_kind,
                 const std::string& input_dir = "", std::ostream* progress = nullptr);
void step_edit(const RunConfig& cfg, const std::string& input_dir = "",
               bool use_injected = true, std::ostream* progress = nullptr);

EvalReport evaluate_matrix(const RunConfig& cfg, std::ostream* progress = nullptr);
void step_evaluate(const RunConfig& cfg, std::ostream* progress = nullptr);

std::string render_report_markdown(const EvalReport& report);
void step_report(const RunConfig& cfg, std::ostream* out_stream);

void step_visualize_residual(const RunConfig& cfg, std::ostream* progress = nullptr);

// loads every checkpoint the evaluation needs, verifying dim compatibility
struct PipelineContext {
    VAEParams vae;
    VAEParams purifier;
    EditorParams editor_clean;
    EditorParams editor_injected;
    DenoiserParams denoiser;
    Corpus corpus;

    static PipelineContext load(const RunConfig& cfg);
};

// corpus regenerated deterministically from the manifest written by gen-data
Corpus load_corpus_from_manifest(const std::string& manifest_path);

}  // namespace gd
