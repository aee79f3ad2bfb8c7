#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "guarddoor/tensor.hpp"

namespace gd {

struct EditorParams;

// Mean SSIM over channels and 11x11 Gaussian windows (sigma 1.5),
// C1=(0.01)^2, C2=(0.03)^2, dynamic range 1. Result in [-1, 1].
double ssim(const Tensor& a, const Tensor& b);

// 10*log10(1/MSE), capped at 100 dB for identical inputs.
double psnr(const Tensor& a, const Tensor& b);

double mse_value(const Tensor& a, const Tensor& b);

// mean-per-element L2 distance between encoder latents of a and b
double latent_l2(const EditorParams& editor, const Tensor& a, const Tensor& b);

// Composite protection score in [0,1]; higher = stronger protection.
//   0.5*(1 - ssim(edited_protected, edited_clean))
// + 0.5*(1 - clamp(mse(edited_protected, x_tar)/mse(edited_clean, x_tar), 0, 1))
double protect_score(const Tensor& edited_protected, const Tensor& edited_clean,
                     const Tensor& x_tar);

constexpr int kReportVersion = 1;

struct EvalRow {
    std::string method;
    std::string attack;
    std::map<std::string, double> metrics;
    std::optional<std::string> skipped;  // reason, when the cell could not run
};

struct EvalReport {
    int report_version = kReportVersion;
    std::map<std::string, std::string> metadata;  // seeds, config hash, dataset id
    std::vector<EvalRow> rows;

    std::string to_csv() const;
    std::string to_json() const;
    static EvalReport from_json(const std::string& text);

    const EvalRow* find(const std::string& method, const std::string& attack) const;
};

}  // namespace gd
