#include "guarddoor/metrics.hpp"

#include <cmath>
#include <sstream>

#include "guarddoor/editor.hpp"
#include "json.hpp"

namespace gd {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& gaussian_window() {
    static const std::vector<double> win = [] {
        std::vector<double> w(kWin * kWin);
        double sum = 0.0;
        for (int y = 0; y < kWin; ++y)
            for (int x = 0; x < kWin; ++x) {
                const double dy = y - kWin / 2;
                const double dx = x - kWin / 2;
                w[y * kWin + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
                sum += w[y * kWin + x];
            }
        for (auto& v : w) v /= sum;
        return w;
    }();
    return win;
}

double ssim_formula(double mu_a, double mu_b, double var_a, double var_b, double cov) {
    return ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
           ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
}

// mean SSIM over windows of one channel plane
double ssim_plane(const float* a, const float* b, int h, int w) {
    if (h < kWin || w < kWin) {
        // image smaller than the window: single whole-image window, uniform weights
        const int n = h * w;
        double mu_a = 0, mu_b = 0;
        for (int i = 0; i < n; ++i) {
            mu_a += a[i];
            mu_b += b[i];
        }
        mu_a /= n;
        mu_b /= n;
        double var_a = 0, var_b = 0, cov = 0;
        for (int i = 0; i < n; ++i) {
            var_a += (a[i] - mu_a) * (a[i] - mu_a);
            var_b += (b[i] - mu_b) * (b[i] - mu_b);
            cov += (a[i] - mu_a) * (b[i] - mu_b);
        }
        var_a /= n;
        var_b /= n;
        cov /= n;
        return ssim_formula(mu_a, mu_b, var_a, var_b, cov);
    }
    const auto& win = gaussian_window();
    double total = 0.0;
    int count = 0;
    for (int y0 = 0; y0 + kWin <= h; ++y0)
        for (int x0 = 0; x0 + kWin <= w; ++x0) {
            double mu_a = 0, mu_b = 0, ea2 = 0, eb2 = 0, eab = 0;
            for (int ky = 0; ky < kWin; ++ky)
                for (int kx = 0; kx < kWin; ++kx) {
                    const double wgt = win[ky * kWin + kx];
                    const double va = a[(y0 + ky) * w + (x0 + kx)];
                    const double vb = b[(y0 + ky) * w + (x0 + kx)];
                    mu_a += wgt * va;
                    mu_b += wgt * vb;
                    ea2 += wgt * va * va;
                    eb2 += wgt * vb * vb;
                    eab += wgt * va * vb;
                }
            const double var_a = ea2 - mu_a * mu_a;
            const double var_b = eb2 - mu_b * mu_b;
            const double cov = eab - mu_a * mu_b;
            total += ssim_formula(mu_a, mu_b, var_a, var_b, cov);
            ++count;
        }
    return total / count;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("ssim: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const Shape& s = a.shape();
    if (s.size() != 4) throw ShapeError("ssim: expected NCHW, got " + shape_str(s));
    const int planes = s[0] * s[1];
    const int hw = s[2] * s[3];
    double total = 0.0;
    for (int p = 0; p < planes; ++p)
        total += ssim_plane(a.data().data() + static_cast<std::size_t>(p) * hw,
                            b.data().data() + static_cast<std::size_t>(p) * hw, s[2], s[3]);
    return total / planes;
}

double mse_value(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mse: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data().size());
}

double psnr(const Tensor& a, const Tensor& b) {
    const double m = mse_value(a, b);
    if (m <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / m));
}

double latent_l2(const EditorParams& editor, const Tensor& a, const Tensor& b) {
    Tensor za = editor.encode(a);
    Tensor zb = editor.encode(b);
    double s = 0.0;
    for (std::size_t i = 0; i < za.data().size(); ++i) {
        const double d = static_cast<double>(za.data()[i]) - zb.data()[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(za.data().size()));
}

double protect_score(const Tensor& edited_protected, const Tensor& edited_clean,
                     const Tensor& x_tar) {
    const double ref = mse_value(edited_clean, x_tar);
    if (ref <= 0.0)
        throw DomainError("protect_score: edited_clean coincides with the target image");
    const double sim = ssim(edited_protected, edited_clean);
    const double ratio = std::clamp(mse_value(edited_protected, x_tar) / ref, 0.0, 1.0);
    return 0.5 * (1.0 - sim) + 0.5 * (1.0 - ratio);
}

// ---------------------------------------------------------------------------
// EvalReport serialization
// ---------------------------------------------------------------------------

std::string EvalReport::to_csv() const {
    // union of metric names, stable order
    std::map<std::string, int> names;
    for (const auto& r : rows)
        for (const auto& [k, v] : r.metrics) names[k] = 1;
    std::ostringstream os;
    os << "method,attack";
    for (const auto& [k, v] : names) os << "," << k;
    os << ",skipped\n";
    for (const auto& r : rows) {
        os << r.method << "," << r.attack;
        for (const auto& [k, v] : names) {
            os << ",";
            auto it = r.metrics.find(k);
            if (it != r.metrics.end()) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.6f", it->second);
                os << buf;
            }
        }
        os << "," << (r.skipped ? *r.skipped : "") << "\n";
    }
    return os.str();
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["report_version"] = report_version;
    j["metadata"] = metadata;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row;
        row["method"] = r.method;
        row["attack"] = r.attack;
        row["metrics"] = r.metrics;
        if (r.skipped) row["skipped"] = *r.skipped;
        j["rows"].push_back(row);
    }
    return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    EvalReport rep;
    rep.report_version = j.at("report_version").get<int>();
    if (rep.report_version != kReportVersion)
        throw std::runtime_error("unsupported report_version " +
                                 std::to_string(rep.report_version));
    rep.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    for (const auto& row : j.at("rows")) {
        EvalRow r;
        r.method = row.at("method").get<std::string>();
        r.attack = row.at("attack").get<std::string>();
        r.metrics = row.at("metrics").get<std::map<std::string, double>>();
        if (row.contains("skipped")) r.skipped = row.at("skipped").get<std::string>();
        rep.rows.push_back(std::move(r));
    }
    return rep;
}

const EvalRow* EvalReport::find(const std::string& method, const std::string& attack) const {
    for (const auto& r : rows)
        if (r.method == method && r.attack == attack) return &r;
    return nullptr;
}

}  // namespace gd
