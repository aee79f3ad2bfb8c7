#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "guarddoor/rng.hpp"

namespace gd {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) throw std::invalid_argument("negative extent in shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

// Reverse-mode tape, define-by-run. A Tape installs itself as the active
// recorder for its scope; ops append backward closures while any input
// requires a gradient.
template <typename T>
class Tape {
public:
    Tape() : prev_(current_) { current_ = this; }
    ~Tape() { current_ = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current() { return current_; }

    void record(std::function<void()> backward) { nodes_.push_back(std::move(backward)); }
    std::size_t size() const { return nodes_.size(); }

    void backward(const std::shared_ptr<TensorImpl<T>>& loss) {
        if (shape_numel(loss->shape) != 1)
            throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                        shape_str(loss->shape));
        loss->ensure_grad();
        loss->grad[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> nodes_;
    Tape* prev_;
    static thread_local Tape* current_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::current_ = nullptr;

template <typename T>
class TensorT {
public:
    TensorT() : impl_(std::make_shared<TensorImpl<T>>()) {}

    explicit TensorT(Shape shape, T fill = T(0), bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl<T>>()) {
        impl_->shape = std::move(shape);
        impl_->data.assign(shape_numel(impl_->shape), fill);
        impl_->requires_grad = requires_grad;
    }

    static TensorT from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        TensorT t;
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::move(data);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static TensorT randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        TensorT t(std::move(shape), T(0), requires_grad);
        for (auto& v : t.impl_->data) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    const Shape& shape() const { return impl_->shape; }
    std::size_t numel() const { return impl_->data.size(); }
    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    std::vector<T>& data() { return impl_->data; }
    const std::vector<T>& data() const { return impl_->data; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::vector<T>& grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    const std::vector<T>& grad_view() const { return impl_->grad; }

    void zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), T(0)); }

    T item() const {
        if (numel() != 1)
            throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape()));
        return impl_->data[0];
    }

    // deep copy that shares nothing with this tensor
    TensorT clone() const {
        TensorT t;
        t.impl_->shape = impl_->shape;
        t.impl_->data = impl_->data;
        t.impl_->requires_grad = impl_->requires_grad;
        return t;
    }

    // detached view with a fresh buffer and no gradient participation
    TensorT detach() const {
        TensorT t = clone();
        t.impl_->requires_grad = false;
        return t;
    }

    bool all_finite() const {
        for (T v : impl_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }

    void backward() const {
        auto* tape = Tape<T>::current();
        if (!tape) throw std::runtime_error("backward called with no active tape");
        tape->backward(impl_);
    }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = TensorT<float>;

namespace detail {

template <typename T>
void accum(const std::shared_ptr<TensorImpl<T>>& impl, const std::vector<T>& delta) {
    if (!impl->requires_grad) return;
    impl->ensure_grad();
    for (std::size_t i = 0; i < delta.size(); ++i) impl->grad[i] += delta[i];
}

template <typename T>
bool grads_wanted(std::initializer_list<const TensorT<T>*> inputs) {
    for (const auto* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <typename T>
TensorT<T> make_output(Shape shape, bool requires_grad) {
    TensorT<T> out(std::move(shape));
    out.set_requires_grad(requires_grad);
    return out;
}

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "add");
    bool rg = detail::grads_wanted<T>({&a, &b});
    auto out = detail::make_output<T>(a.shape(), rg);
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (rg && Tape<T>::current()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape<T>::current()->record([ai, bi, oi] {
            if (oi->grad.empty()) return;
            detail::accum(ai, oi->grad);
            detail::accum(bi, oi->grad);
        });
    }
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "sub");
    bool rg = detail::grads_wanted<T>({&a, &b});
    auto out = detail::make_output<T>(a.shape(), rg);
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    if (rg && Tape<T>::current()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape<T>::current()->record([ai, bi, oi] {
            if (oi->grad.empty()) return;
            detail::accum(ai, oi->grad);
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] -= oi->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "mul");
    bool rg = detail::grads_wanted<T>({&a, &b});
    auto out = detail::make_output<T>(a.shape(), rg);
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (rg && Tape<T>::current()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape<T>::current()->record([ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < oi->grad.size(); ++i)
                    ai->grad[i] += oi->grad[i] * bi->data[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < oi->grad.size(); ++i)
                    bi->grad[i] += oi->grad[i] * ai->data[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> scalar_mul(const TensorT<T>& a, T c) {
    bool rg = a.requires_grad();
    auto out = detail::make_output<T>(a.shape(), rg);
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
    if (rg && Tape<T>::current()) {
        auto ai = a.impl(), oi = out.impl();
        Tape<T>::current()->record([ai, oi, c] {
            if (oi->grad.empty()) return;
            ai->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * c;
        });
    }
    return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
    bool rg = a.requires_grad();
    auto out = detail::make_output<T>(a.shape(), rg);
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + c;
    if (rg && Tape<T>::current()) {
        auto ai = a.impl(), oi = out.impl();
        Tape<T>::current()->record([ai, oi] {
            if (oi->grad.empty()) return;
            detail::accum(ai, oi->grad);
        });
    }
    return out;
}

// x: (N, C, H, W) plus per-channel bias (C)
template <typename T>
TensorT<T> bias_add(const TensorT<T>& x, const TensorT<T>& b) {
    if (x.shape().size() != 4 || b.shape().size() != 1 || b.shape()[0] != x.shape()[1])
        throw ShapeError("bias_add: expected NCHW " + shape_str(x.shape()) + " with bias (C), got " +
                         shape_str(b.shape()));
    bool rg = detail::grads_wanted<T>({&x, &b});
    auto out = detail::make_output<T>(x.shape(), rg);
    const int N = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
    const auto& xv = x.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    std::size_t idx = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T bc = bv[static_cast<std::size_t>(c)];
            for (int i = 0; i < HW; ++i, ++idx) ov[idx] = xv[idx] + bc;
        }
    if (rg && Tape<T>::current()) {
        auto xi = x.impl(), bi = b.impl(), oi = out.impl();
        Tape<T>::current()->record([xi, bi, oi, N, C, HW] {
            if (oi->grad.empty()) return;
            if (xi->requires_grad) detail::accum(xi, oi->grad);
            if (bi->requires_grad) {
                bi->ensure_grad();
                std::size_t idx = 0;
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        T s = 0;
                        for (int i = 0; i < HW; ++i, ++idx) s += oi->grad[idx];
                        bi->grad[static_cast<std::size_t>(c)] += s;
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// activations and pointwise transcendentals
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    bool rg = x.requires_grad();
    auto out = detail::make_output<T>(x.shape(), rg);
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
    if (rg && Tape<T>::current()) {
        auto xi = x.impl(), oi = out.impl();
        Tape<T>::current()->record([xi, oi] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i)
                if (xi->data[i] > T(0)) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    bool rg = x.requires_grad();
    auto out = detail::make_output<T>(x.shape(), rg);
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i)
        ov[i] = T(1) / (T(1) + std::exp(-xv[i]));
    if (rg && Tape<T>::current()) {
        auto xi = x.impl(), oi = out.impl();
        Tape<T>::current()->record([xi, oi] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                T s = oi->data[i];
                xi->grad[i] += oi->grad[i] * s * (T(1) - s);
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> silu(const TensorT<T>& x) {
    bool rg = x.requires_grad();
    auto out = detail::make_output<T>(x.shape(), rg);
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        T s = T(1) / (T(1) + std::exp(-xv[i]));
        ov[i] = xv[i] * s;
    }
    if (rg && Tape<T>::current()) {
        auto xi = x.impl(), oi = out.impl();
        Tape<T>::current()->record([xi, oi] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                T v = xi->data[i];
                T s = T(1) / (T(1) + std::exp(-v));
                xi->grad[i] += oi->grad[i] * (s + v * s * (T(1) - s));
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> tanh_op(const TensorT<T>& x) {
    bool rg = x.requires_grad();
    auto out = detail::make_output<T>(x.shape(), rg);
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::tanh(xv[i]);
    if (rg && Tape<T>::current()) {
        auto xi = x.impl(), oi = out.impl();
        Tape<T>::current()->record([xi, oi] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i)
                xi->grad[i] += oi->grad[i] * (T(1) - oi->data[i] * oi->data[i]);
        });
    }
    return out;
}

template <typename T>
TensorT<T> exp_op(const TensorT<T>& x) {
    bool rg = x.requires_grad();
    auto out = detail::make_output<T>(x.shape(), rg);
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::exp(xv[i]);
    if (rg && Tape<T>::current()) {
        auto xi = x.impl(), oi = out.impl();
        Tape<T>::current()->record([xi, oi] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i)
                xi->grad[i] += oi->grad[i] * oi->data[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> log_op(const TensorT<T>& x) {
    for (T v : x.data())
        if (!(v > T(0))) throw DomainError("log: non-positive input " + std::to_string((double)v));
    bool rg = x.requires_grad();
    auto out = detail::make_output<T>(x.shape(), rg);
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(xv[i]);
    if (rg && Tape<T>::current()) {
        auto xi = x.impl(), oi = out.impl();
        Tape<T>::current()->record([xi, oi] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i)
                xi->grad[i] += oi->grad[i] / xi->data[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    bool rg = x.requires_grad();
    auto out = detail::make_output<T>(std::move(new_shape), rg);
    out.data() = x.data();
    if (rg && Tape<T>::current()) {
        auto xi = x.impl(), oi = out.impl();
        Tape<T>::current()->record([xi, oi] {
            if (oi->grad.empty()) return;
            detail::accum(xi, oi->grad);
        });
    }
    return out;
}

// concat along the channel dimension of NCHW tensors
template <typename T>
TensorT<T> concat(const TensorT<T>& a, const TensorT<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw ShapeError("concat: incompatible shapes " + shape_str(sa) + " vs " + shape_str(sb));
    bool rg = detail::grads_wanted<T>({&a, &b});
    Shape so = sa;
    so[1] = sa[1] + sb[1];
    auto out = detail::make_output<T>(so, rg);
    const int N = sa[0], Ca = sa[1], Cb = sb[1], HW = sa[2] * sa[3];
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (int n = 0; n < N; ++n) {
        std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(n) * Ca * HW, Ca * HW,
                    ov.begin() + static_cast<std::ptrdiff_t>(n) * (Ca + Cb) * HW);
        std::copy_n(bv.begin() + static_cast<std::ptrdiff_t>(n) * Cb * HW, Cb * HW,
                    ov.begin() + static_cast<std::ptrdiff_t>(n) * (Ca + Cb) * HW + Ca * HW);
    }
    if (rg && Tape<T>::current()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape<T>::current()->record([ai, bi, oi, N, Ca, Cb, HW] {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (int n = 0; n < N; ++n)
                    for (int i = 0; i < Ca * HW; ++i)
                        ai->grad[static_cast<std::size_t>(n) * Ca * HW + i] +=
                            oi->grad[static_cast<std::size_t>(n) * (Ca + Cb) * HW + i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (int n = 0; n < N; ++n)
                    for (int i = 0; i < Cb * HW; ++i)
                        bi->grad[static_cast<std::size_t>(n) * Cb * HW + i] +=
                            oi->grad[static_cast<std::size_t>(n) * (Ca + Cb) * HW + Ca * HW + i];
            }
        });
    }
    return out;
}

// channel slice [c0, c1) of an NCHW tensor
template <typename T>
TensorT<T> slice_channels(const TensorT<T>& x, int c0, int c1) {
    const Shape& s = x.shape();
    if (s.size() != 4 || c0 < 0 || c1 > s[1] || c0 >= c1)
        throw ShapeError("slice_channels: bad range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for shape " + shape_str(s));
    bool rg = x.requires_grad();
    Shape so = s;
    so[1] = c1 - c0;
    auto out = detail::make_output<T>(so, rg);
    const int N = s[0], C = s[1], Cs = c1 - c0, HW = s[2] * s[3];
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int n = 0; n < N; ++n)
        std::copy_n(xv.begin() + (static_cast<std::ptrdiff_t>(n) * C + c0) * HW, Cs * HW,
                    ov.begin() + static_cast<std::ptrdiff_t>(n) * Cs * HW);
    if (rg && Tape<T>::current()) {
        auto xi = x.impl(), oi = out.impl();
        Tape<T>::current()->record([xi, oi, N, C, Cs, c0, HW] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int i = 0; i < Cs * HW; ++i)
                    xi->grad[(static_cast<std::size_t>(n) * C + c0) * HW + i] +=
                        oi->grad[static_cast<std::size_t>(n) * Cs * HW + i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
    bool rg = x.requires_grad();
    auto out = detail::make_output<T>({1}, rg);
    T s = 0;
    for (T v : x.data()) s += v;
    out.data()[0] = s;
    if (rg && Tape<T>::current()) {
        auto xi = x.impl(), oi = out.impl();
        Tape<T>::current()->record([xi, oi] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            for (auto& g : xi->grad) g += oi->grad[0];
        });
    }
    return out;
}

template <typename T>
TensorT<T> mean(const TensorT<T>& x) {
    if (x.numel() == 0) throw ShapeError("mean of empty tensor");
    auto out = sum(x);
    return scalar_mul(out, T(1) / static_cast<T>(x.numel()));
}

// mean squared error, scalar output
template <typename T>
TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "mse");
    bool rg = detail::grads_wanted<T>({&a, &b});
    auto out = detail::make_output<T>({1}, rg);
    const auto& av = a.data();
    const auto& bv = b.data();
    T s = 0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        T d = av[i] - bv[i];
        s += d * d;
    }
    const T inv_n = T(1) / static_cast<T>(av.size());
    out.data()[0] = s * inv_n;
    if (rg && Tape<T>::current()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape<T>::current()->record([ai, bi, oi, inv_n] {
            if (oi->grad.empty()) return;
            T g = oi->grad[0] * T(2) * inv_n;
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < ai->data.size(); ++i)
                    ai->grad[i] += g * (ai->data[i] - bi->data[i]);
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < bi->data.size(); ++i)
                    bi->grad[i] -= g * (ai->data[i] - bi->data[i]);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul (2-D)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " vs " + shape_str(sb));
    const int M = sa[0], K = sa[1], N = sb[1];
    bool rg = detail::grads_wanted<T>({&a, &b});
    auto out = detail::make_output<T>({M, N}, rg);
    const T* av = a.data().data();
    const T* bv = b.data().data();
    T* ov = out.data().data();
    for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
            const T amk = av[m * K + k];
            const T* brow = bv + static_cast<std::ptrdiff_t>(k) * N;
            T* orow = ov + static_cast<std::ptrdiff_t>(m) * N;
            for (int n = 0; n < N; ++n) orow[n] += amk * brow[n];
        }
    if (rg && Tape<T>::current()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape<T>::current()->record([ai, bi, oi, M, K, N] {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (int m = 0; m < M; ++m)
                    for (int n = 0; n < N; ++n) {
                        const T g = oi->grad[static_cast<std::size_t>(m) * N + n];
                        for (int k = 0; k < K; ++k)
                            ai->grad[static_cast<std::size_t>(m) * K + k] +=
                                g * bi->data[static_cast<std::size_t>(k) * N + n];
                    }
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (int m = 0; m < M; ++m)
                    for (int n = 0; n < N; ++n) {
                        const T g = oi->grad[static_cast<std::size_t>(m) * N + n];
                        for (int k = 0; k < K; ++k)
                            bi->grad[static_cast<std::size_t>(k) * N + n] +=
                                g * ai->data[static_cast<std::size_t>(m) * K + k];
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolutions, NCHW
//   conv2d weight layout            (C_out, C_in, kh, kw)
//   conv2d_transpose weight layout  (C_in,  C_out, kh, kw)
// conv2d_transpose is exactly the adjoint of conv2d with the same weight
// buffer, which the property tests rely on.
// ---------------------------------------------------------------------------

namespace detail {

// y[n,o,oy,ox] += sum_{c,ky,kx} x[n,c,oy*s+ky-p, ox*s+kx-p] * w[o,c,ky,kx]
template <typename T>
void conv2d_forward_kernel(const T* x, const T* w, T* y, int N, int C, int H, int W, int O, int kh,
                           int kw, int stride, int pad, int OH, int OW) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    T acc = 0;
                    for (int c = 0; c < C; ++c) {
                        const T* xc = x + ((static_cast<std::size_t>(n) * C + c) * H) * W;
                        const T* wc = w + ((static_cast<std::size_t>(o) * C + c) * kh) * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= W) continue;
                                acc += xc[iy * W + ix] * wc[ky * kw + kx];
                            }
                        }
                    }
                    y[((static_cast<std::size_t>(n) * O + o) * OH + oy) * OW + ox] += acc;
                }
}

// dx[n,c,iy,ix] += sum dy[n,o,oy,ox] * w[o,c,ky,kx]   (scatter form)
template <typename T>
void conv2d_backward_input_kernel(const T* dy, const T* w, T* dx, int N, int C, int H, int W, int O,
                                  int kh, int kw, int stride, int pad, int OH, int OW) {
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    const T g = dy[((static_cast<std::size_t>(n) * O + o) * OH + oy) * OW + ox];
                    if (g == T(0)) continue;
                    for (int c = 0; c < C; ++c) {
                        T* xc = dx + ((static_cast<std::size_t>(n) * C + c) * H) * W;
                        const T* wc = w + ((static_cast<std::size_t>(o) * C + c) * kh) * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= W) continue;
                                xc[iy * W + ix] += g * wc[ky * kw + kx];
                            }
                        }
                    }
                }
}

// dw[o,c,ky,kx] += sum x[n,c,iy,ix] * dy[n,o,oy,ox]
// Parallel over o: each thread owns a disjoint slice of dw.
template <typename T>
void conv2d_backward_weight_kernel(const T* x, const T* dy, T* dw, int N, int C, int H, int W,
                                   int O, int kh, int kw, int stride, int pad, int OH, int OW) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < O; ++o)
        for (int n = 0; n < N; ++n)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    const T g = dy[((static_cast<std::size_t>(n) * O + o) * OH + oy) * OW + ox];
                    if (g == T(0)) continue;
                    for (int c = 0; c < C; ++c) {
                        const T* xc = x + ((static_cast<std::size_t>(n) * C + c) * H) * W;
                        T* wc = dw + ((static_cast<std::size_t>(o) * C + c) * kh) * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= W) continue;
                                wc[ky * kw + kx] += g * xc[iy * W + ix];
                            }
                        }
                    }
                }
}

}  // namespace detail

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, int stride, int pad) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1])
        throw ShapeError("conv2d: input " + shape_str(sx) + " incompatible with weight " +
                         shape_str(sw));
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    const int N = sx[0], C = sx[1], H = sx[2], W = sx[3];
    const int O = sw[0], kh = sw[2], kw = sw[3];
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
    if (OH <= 0 || OW <= 0)
        throw ShapeError("conv2d: kernel " + shape_str(sw) + " too large for input " +
                         shape_str(sx));
    bool rg = detail::grads_wanted<T>({&x, &w});
    auto out = detail::make_output<T>({N, O, OH, OW}, rg);
    detail::conv2d_forward_kernel(x.data().data(), w.data().data(), out.data().data(), N, C, H, W,
                                  O, kh, kw, stride, pad, OH, OW);
    if (rg && Tape<T>::current()) {
        auto xi = x.impl(), wi = w.impl(), oi = out.impl();
        Tape<T>::current()->record([xi, wi, oi, N, C, H, W, O, kh, kw, stride, pad, OH, OW] {
            if (oi->grad.empty()) return;
            if (xi->requires_grad) {
                xi->ensure_grad();
                detail::conv2d_backward_input_kernel(oi->grad.data(), wi->data.data(),
                                                     xi->grad.data(), N, C, H, W, O, kh, kw,
                                                     stride, pad, OH, OW);
            }
            if (wi->requires_grad) {
                wi->ensure_grad();
                detail::conv2d_backward_weight_kernel(xi->data.data(), oi->grad.data(),
                                                      wi->grad.data(), N, C, H, W, O, kh, kw,
                                                      stride, pad, OH, OW);
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> conv2d_transpose(const TensorT<T>& x, const TensorT<T>& w, int stride, int pad) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[0])
        throw ShapeError("conv2d_transpose: input " + shape_str(sx) + " incompatible with weight " +
                         shape_str(sw));
    if (stride < 1) throw std::invalid_argument("conv2d_transpose: stride must be >= 1");
    const int N = sx[0], I = sx[1], H = sx[2], W = sx[3];
    const int O = sw[1], kh = sw[2], kw = sw[3];
    const int OH = (H - 1) * stride - 2 * pad + kh;
    const int OW = (W - 1) * stride - 2 * pad + kw;
    if (OH <= 0 || OW <= 0)
        throw ShapeError("conv2d_transpose: degenerate output for input " + shape_str(sx));
    bool rg = detail::grads_wanted<T>({&x, &w});
    auto out = detail::make_output<T>({N, O, OH, OW}, rg);
    // forward of transpose == backward-input of conv with roles (x <-> y)
    detail::conv2d_backward_input_kernel(x.data().data(), w.data().data(), out.data().data(), N, O,
                                         OH, OW, I, kh, kw, stride, pad, H, W);
    if (rg && Tape<T>::current()) {
        auto xi = x.impl(), wi = w.impl(), oi = out.impl();
        Tape<T>::current()->record([xi, wi, oi, N, I, H, W, O, kh, kw, stride, pad, OH, OW] {
            if (oi->grad.empty()) return;
            if (xi->requires_grad) {
                xi->ensure_grad();
                detail::conv2d_forward_kernel(oi->grad.data(), wi->data.data(), xi->grad.data(), N,
                                              O, OH, OW, I, kh, kw, stride, pad, H, W);
            }
            if (wi->requires_grad) {
                wi->ensure_grad();
                detail::conv2d_backward_weight_kernel(oi->grad.data(), xi->data.data(),
                                                      wi->grad.data(), N, O, OH, OW, I, kh, kw,
                                                      stride, pad, H, W);
            }
        });
    }
    return out;
}

}  // namespace gd
