#pragma once

#include <cmath>
#include <string>

#include "guarddoor/optim.hpp"
#include "guarddoor/tensor.hpp"

namespace gd::nn {

struct Conv2d {
    Tensor w;  // (C_out, C_in, kh, kw)
    Tensor b;  // (C_out)
    int stride = 1;
    int pad = 1;

    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        const float scale = std::sqrt(2.0f / static_cast<float>(in_ch * k * k));
        w = Tensor::randn({out_ch, in_ch, k, k}, rng, scale, true);
        b = Tensor({out_ch}, 0.0f, true);
    }

    Tensor forward(const Tensor& x) const { return bias_add(conv2d(x, w, stride, pad), b); }

    void collect(ParamSet& out, const std::string& prefix) {
        out.emplace_back(prefix + ".w", w);
        out.emplace_back(prefix + ".b", b);
    }
};

struct ConvT2d {
    Tensor w;  // (C_in, C_out, kh, kw)
    Tensor b;  // (C_out)
    int stride = 2;
    int pad = 1;

    ConvT2d() = default;
    ConvT2d(int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        const float scale = std::sqrt(2.0f / static_cast<float>(in_ch * k * k));
        w = Tensor::randn({in_ch, out_ch, k, k}, rng, scale, true);
        b = Tensor({out_ch}, 0.0f, true);
    }

    Tensor forward(const Tensor& x) const {
        return bias_add(conv2d_transpose(x, w, stride, pad), b);
    }

    void collect(ParamSet& out, const std::string& prefix) {
        out.emplace_back(prefix + ".w", w);
        out.emplace_back(prefix + ".b", b);
    }
};

inline void set_requires_grad(ParamSet& params, bool rg) {
    for (auto& [name, p] : params) p.set_requires_grad(rg);
}

}  // namespace gd::nn
