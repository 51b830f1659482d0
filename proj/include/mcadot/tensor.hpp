#ifndef MCADOT_TENSOR_HPP
#define MCADOT_TENSOR_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mcadot/common.hpp"

// Dense 4D tensors, convolution, pooling and upsampling, each paired with
// its exact adjoint. Convolutions run as im2col + GEMM; the scalar type is
// a template parameter (float for training throughput, double for gradient
// verification).

namespace mcadot::nnet {

template <typename T>
struct Tensor4 {
    std::vector<T> data;
    int n = 0, c = 0, h = 0, w = 0;  // batch, channels, height, width

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_, T fill = T(0))
        : data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill), n(n_), c(c_), h(h_), w(w_) {}

    std::size_t index(int b, int ch, int y, int x) const {
        return ((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x;
    }
    T at(int b, int ch, int y, int x) const { return data[index(b, ch, y, x)]; }
    T& at(int b, int ch, int y, int x) { return data[index(b, ch, y, x)]; }

    std::size_t size() const { return data.size(); }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
    T* sample(int b) { return data.data() + b * sample_size(); }
    const T* sample(int b) const { return data.data() + b * sample_size(); }

    bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

template <typename T>
inline bool all_finite(const Tensor4<T>& t) {
    for (T v : t.data)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatRM<T>>;
template <typename T>
using CMap = Eigen::Map<const MatRM<T>>;

/// col(ci*k*k, oh*ow) layout for a single sample, zero padding.
template <typename T>
inline void im2col(const T* src, int c, int h, int w, int k, int pad, T* col) {
    const int oh = h, ow = w;  // padding preserves spatial size
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* dst = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * (static_cast<std::size_t>(oh) * ow);
                for (int y = 0; y < oh; ++y) {
                    int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst + static_cast<std::size_t>(y) * ow, dst + (static_cast<std::size_t>(y) + 1) * ow, T(0));
                        continue;
                    }
                    const T* row = src + (static_cast<std::size_t>(ci) * h + sy) * w;
                    int x0 = std::max(0, pad - kx);
                    int x1 = std::min(ow, w + pad - kx);
                    T* out_row = dst + static_cast<std::size_t>(y) * ow;
                    for (int x = 0; x < x0; ++x) out_row[x] = T(0);
                    for (int x = x0; x < x1; ++x) out_row[x] = row[x + kx - pad];
                    for (int x = x1; x < ow; ++x) out_row[x] = T(0);
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-add columns back into the image.
template <typename T>
inline void col2im_add(const T* col, int c, int h, int w, int k, int pad, T* dst) {
    const int oh = h, ow = w;
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* src = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * (static_cast<std::size_t>(oh) * ow);
                for (int y = 0; y < oh; ++y) {
                    int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    T* row = dst + (static_cast<std::size_t>(ci) * h + sy) * w;
                    int x0 = std::max(0, pad - kx);
                    int x1 = std::min(ow, w + pad - kx);
                    const T* src_row = src + static_cast<std::size_t>(y) * ow;
                    for (int x = x0; x < x1; ++x) row[x + kx - pad] += src_row[x];
                }
            }
        }
    }
}

template <typename T>
inline std::vector<T>& conv_scratch() {
    thread_local std::vector<T> buf;
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding preserving spatial size)
// ---------------------------------------------------------------------------

/// weights: (out_ch, in_ch, k, k); bias: out_ch. pad must equal k/2 so the
/// output keeps the input's spatial size.
template <typename T>
inline Tensor4<T> conv2d(const Tensor4<T>& input, const Tensor4<T>& weights,
                         const std::vector<T>& bias, int pad) {
    const int k = weights.h;
    require(weights.w == k, "conv2d: kernel must be square");
    require(weights.c == input.c,
            "conv2d: weight input channels " + std::to_string(weights.c) +
                " do not match input channels " + std::to_string(input.c));
    require(static_cast<int>(bias.size()) == weights.n, "conv2d: bias size mismatch");
    require(pad == k / 2, "conv2d: padding must preserve spatial size");

    const int oc = weights.n, ic = input.c, h = input.h, w = input.w;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    Tensor4<T> out(input.n, oc, h, w);
    detail::CMap<T> wmat(weights.data.data(), oc, static_cast<Eigen::Index>(ic) * k * k);

    for (int b = 0; b < input.n; ++b) {
        detail::Map<T> omat(out.sample(b), oc, static_cast<Eigen::Index>(hw));
        if (k == 1) {
            detail::CMap<T> imat(input.sample(b), ic, static_cast<Eigen::Index>(hw));
            omat.noalias() = wmat * imat;
        } else {
            auto& scratch = detail::conv_scratch<T>();
            scratch.resize(static_cast<std::size_t>(ic) * k * k * hw);
            detail::im2col(input.sample(b), ic, h, w, k, pad, scratch.data());
            detail::CMap<T> cmat(scratch.data(), static_cast<Eigen::Index>(ic) * k * k, static_cast<Eigen::Index>(hw));
            omat.noalias() = wmat * cmat;
        }
        for (int o = 0; o < oc; ++o) {
            T* row = out.sample(b) + o * hw;
            for (std::size_t i = 0; i < hw; ++i) row[i] += bias[static_cast<std::size_t>(o)];
        }
    }
    return out;
}

template <typename T>
struct ConvGrads {
    Tensor4<T> input;    // same shape as the forward input
    Tensor4<T> weights;  // same shape as the weights
    std::vector<T> bias;
};

/// Exact adjoint of conv2d for all three arguments.
template <typename T>
inline ConvGrads<T> conv2d_backward(const Tensor4<T>& input, const Tensor4<T>& weights,
                                    const Tensor4<T>& grad_out, int pad) {
    const int k = weights.h;
    const int oc = weights.n, ic = input.c, h = input.h, w = input.w;
    require(grad_out.n == input.n && grad_out.c == oc && grad_out.h == h && grad_out.w == w,
            "conv2d_backward: upstream gradient shape " + grad_out.shape_str() + " mismatch");
    const std::size_t hw = static_cast<std::size_t>(h) * w;

    ConvGrads<T> g;
    g.input = Tensor4<T>(input.n, ic, h, w);
    g.weights = Tensor4<T>(oc, ic, k, k);
    g.bias.assign(static_cast<std::size_t>(oc), T(0));

    detail::CMap<T> wmat(weights.data.data(), oc, static_cast<Eigen::Index>(ic) * k * k);
    detail::Map<T> gwmat(g.weights.data.data(), oc, static_cast<Eigen::Index>(ic) * k * k);

    auto& scratch = detail::conv_scratch<T>();
    std::vector<T> gcol;
    for (int b = 0; b < input.n; ++b) {
        detail::CMap<T> gomat(grad_out.sample(b), oc, static_cast<Eigen::Index>(hw));
        for (int o = 0; o < oc; ++o) {
            const T* row = grad_out.sample(b) + o * hw;
            T acc = T(0);
            for (std::size_t i = 0; i < hw; ++i) acc += row[i];
            g.bias[static_cast<std::size_t>(o)] += acc;
        }
        if (k == 1) {
            detail::CMap<T> imat(input.sample(b), ic, static_cast<Eigen::Index>(hw));
            gwmat.noalias() += gomat * imat.transpose();
            detail::Map<T> gimat(g.input.sample(b), ic, static_cast<Eigen::Index>(hw));
            gimat.noalias() = wmat.transpose() * gomat;
        } else {
            scratch.resize(static_cast<std::size_t>(ic) * k * k * hw);
            detail::im2col(input.sample(b), ic, h, w, k, pad, scratch.data());
            detail::CMap<T> cmat(scratch.data(), static_cast<Eigen::Index>(ic) * k * k, static_cast<Eigen::Index>(hw));
            gwmat.noalias() += gomat * cmat.transpose();

            gcol.resize(scratch.size());
            detail::Map<T> gcmat(gcol.data(), static_cast<Eigen::Index>(ic) * k * k, static_cast<Eigen::Index>(hw));
            gcmat.noalias() = wmat.transpose() * gomat;
            detail::col2im_add(gcol.data(), ic, h, w, k, pad, g.input.sample(b));
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2
// ---------------------------------------------------------------------------

template <typename T>
struct PoolResult {
    Tensor4<T> output;
    std::vector<uint8_t> argmax;  // 0..3, row-major within each window; ties -> first
};

template <typename T>
inline PoolResult<T> maxpool2(const Tensor4<T>& input) {
    require(input.h % 2 == 0 && input.w % 2 == 0,
            "maxpool2: spatial dims must be even, got " + input.shape_str());
    const int oh = input.h / 2, ow = input.w / 2;
    PoolResult<T> r;
    r.output = Tensor4<T>(input.n, input.c, oh, ow);
    r.argmax.assign(r.output.size(), 0);
    std::size_t oi = 0;
    for (int b = 0; b < input.n; ++b) {
        for (int ch = 0; ch < input.c; ++ch) {
            const T* plane = input.data.data() + input.index(b, ch, 0, 0);
            for (int y = 0; y < oh; ++y) {
                const T* r0 = plane + static_cast<std::size_t>(2 * y) * input.w;
                const T* r1 = r0 + input.w;
                for (int x = 0; x < ow; ++x, ++oi) {
                    T v[4] = {r0[2 * x], r0[2 * x + 1], r1[2 * x], r1[2 * x + 1]};
                    int best = 0;
                    for (int i = 1; i < 4; ++i)
                        if (v[i] > v[best]) best = i;
                    r.output.data[oi] = v[best];
                    r.argmax[oi] = static_cast<uint8_t>(best);
                }
            }
        }
    }
    return r;
}

/// Routes each upstream value to its recorded argmax position.
template <typename T>
inline Tensor4<T> maxpool2_backward(const Tensor4<T>& grad_out, const std::vector<uint8_t>& argmax,
                                    int in_h, int in_w) {
    require(grad_out.h * 2 == in_h && grad_out.w * 2 == in_w, "maxpool2_backward: shape mismatch");
    require(argmax.size() == grad_out.size(), "maxpool2_backward: argmax size mismatch");
    Tensor4<T> g(grad_out.n, grad_out.c, in_h, in_w);
    std::size_t oi = 0;
    for (int b = 0; b < grad_out.n; ++b) {
        for (int ch = 0; ch < grad_out.c; ++ch) {
            T* plane = g.data.data() + g.index(b, ch, 0, 0);
            for (int y = 0; y < grad_out.h; ++y) {
                for (int x = 0; x < grad_out.w; ++x, ++oi) {
                    int a = argmax[oi];
                    int sy = 2 * y + a / 2;
                    int sx = 2 * x + a % 2;
                    plane[static_cast<std::size_t>(sy) * in_w + sx] += grad_out.data[oi];
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Nearest-neighbor 2x upsampling
// ---------------------------------------------------------------------------

template <typename T>
inline Tensor4<T> upsample2(const Tensor4<T>& input) {
    Tensor4<T> out(input.n, input.c, input.h * 2, input.w * 2);
    for (int b = 0; b < input.n; ++b) {
        for (int ch = 0; ch < input.c; ++ch) {
            const T* src = input.data.data() + input.index(b, ch, 0, 0);
            T* dst = out.data.data() + out.index(b, ch, 0, 0);
            for (int y = 0; y < input.h; ++y) {
                T* d0 = dst + static_cast<std::size_t>(2 * y) * out.w;
                T* d1 = d0 + out.w;
                for (int x = 0; x < input.w; ++x) {
                    T v = src[static_cast<std::size_t>(y) * input.w + x];
                    d0[2 * x] = v;
                    d0[2 * x + 1] = v;
                    d1[2 * x] = v;
                    d1[2 * x + 1] = v;
                }
            }
        }
    }
    return out;
}

/// Adjoint of upsample2: sums the gradient over each 2x2 replication group.
template <typename T>
inline Tensor4<T> upsample2_backward(const Tensor4<T>& grad_out) {
    require(grad_out.h % 2 == 0 && grad_out.w % 2 == 0, "upsample2_backward: odd spatial dims");
    Tensor4<T> g(grad_out.n, grad_out.c, grad_out.h / 2, grad_out.w / 2);
    for (int b = 0; b < grad_out.n; ++b) {
        for (int ch = 0; ch < grad_out.c; ++ch) {
            const T* src = grad_out.data.data() + grad_out.index(b, ch, 0, 0);
            T* dst = g.data.data() + g.index(b, ch, 0, 0);
            for (int y = 0; y < g.h; ++y) {
                const T* s0 = src + static_cast<std::size_t>(2 * y) * grad_out.w;
                const T* s1 = s0 + grad_out.w;
                for (int x = 0; x < g.w; ++x)
                    dst[static_cast<std::size_t>(y) * g.w + x] =
                        s0[2 * x] + s0[2 * x + 1] + s1[2 * x] + s1[2 * x + 1];
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// ReLU and channel concatenation
// ---------------------------------------------------------------------------

template <typename T>
inline void relu_inplace(Tensor4<T>& t) {
    for (T& v : t.data)
        if (v < T(0)) v = T(0);
}

/// Gradient through ReLU given the forward *output* (output > 0 marks the
/// pass-through positions).
template <typename T>
inline void relu_backward_inplace(Tensor4<T>& grad, const Tensor4<T>& output) {
    require(grad.same_shape(output), "relu_backward: shape mismatch");
    for (std::size_t i = 0; i < grad.data.size(); ++i)
        if (!(output.data[i] > T(0))) grad.data[i] = T(0);
}

/// Concatenates along the channel axis: out channels = a.c + b.c, a first.
template <typename T>
inline Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
    require(a.n == b.n && a.h == b.h && a.w == b.w,
            "concat_channels: spatial/batch mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor4<T> out(a.n, a.c + b.c, a.h, a.w);
    const std::size_t plane_a = a.sample_size(), plane_b = b.sample_size();
    for (int s = 0; s < a.n; ++s) {
        std::copy(a.sample(s), a.sample(s) + plane_a, out.sample(s));
        std::copy(b.sample(s), b.sample(s) + plane_b, out.sample(s) + plane_a);
    }
    return out;
}

/// Splits a gradient w.r.t. concat_channels output back into the two parts.
template <typename T>
inline void split_channels(const Tensor4<T>& grad, int c_a, Tensor4<T>& grad_a, Tensor4<T>& grad_b) {
    grad_a = Tensor4<T>(grad.n, c_a, grad.h, grad.w);
    grad_b = Tensor4<T>(grad.n, grad.c - c_a, grad.h, grad.w);
    const std::size_t plane_a = grad_a.sample_size(), plane_b = grad_b.sample_size();
    for (int s = 0; s < grad.n; ++s) {
        std::copy(grad.sample(s), grad.sample(s) + plane_a, grad_a.sample(s));
        std::copy(grad.sample(s) + plane_a, grad.sample(s) + plane_a + plane_b, grad_b.sample(s));
    }
}

}  // namespace mcadot::nnet

#endif
