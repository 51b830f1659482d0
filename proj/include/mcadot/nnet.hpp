#ifndef MCADOT_NNET_HPP
#define MCADOT_NNET_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcadot/common.hpp"
#include "mcadot/tensor.hpp"

// Encoder-decoder fully convolutional network with skip connections,
// hand-derived backpropagation, and Adam.
//
// Encoder stage i: convs_per_stage 3x3 conv+ReLU blocks at stage_widths[i]
// channels, followed by 2x2 max pooling. Decoder stage j: nearest-neighbor
// 2x upsampling, concatenation with the matching encoder stage's pre-pool
// features, then one 3x3 conv+ReLU. A 1x1 conv + sigmoid head produces
// per-pixel probabilities at the input resolution.

namespace mcadot::nnet {

struct ArchConfig {
    std::vector<int> stage_widths = {16, 32, 64, 128};
    int convs_per_stage = 2;
    int kernel = 3;
    int in_channels = 1;
    int out_channels = 1;
    int input_h = 128;
    int input_w = 128;

    bool operator==(const ArchConfig&) const = default;

    int stages() const { return static_cast<int>(stage_widths.size()); }

    void validate() const {
        require(stages() >= 2, "architecture needs at least 2 stages");
        for (int w : stage_widths) require(w >= 1, "stage widths must be positive");
        require(convs_per_stage >= 1, "convs_per_stage must be >= 1");
        require(kernel % 2 == 1, "kernel size must be odd");
        int div = 1 << stages();
        require(input_h % div == 0 && input_w % div == 0,
                "input spatial size must be divisible by 2^stages");
    }

    static ArchConfig desk() { return ArchConfig{}; }

    /// VGG16-style widths for the encoder.
    static ArchConfig vgg16() {
        ArchConfig a;
        a.stage_widths = {64, 128, 256, 512};
        return a;
    }

    static ArchConfig named(const std::string& name) {
        if (name == "desk") return desk();
        if (name == "vgg16") return vgg16();
        throw data_error("unknown architecture preset '" + name + "' (expected desk|vgg16)");
    }
};

template <typename T>
struct ConvLayer {
    Tensor4<T> w;       // (out_ch, in_ch, k, k)
    std::vector<T> b;   // out_ch
};

/// All learnable tensors; also reused as the container for gradients and
/// Adam moments (identical shapes, deterministic iteration order).
template <typename T>
struct FcnParams {
    std::vector<std::vector<ConvLayer<T>>> enc;  // [stage][conv]
    std::vector<ConvLayer<T>> dec;               // [stage]
    ConvLayer<T> head;

    template <typename F>
    void for_each_layer(F&& f) {
        for (std::size_t s = 0; s < enc.size(); ++s)
            for (std::size_t j = 0; j < enc[s].size(); ++j)
                f(enc[s][j], "enc" + std::to_string(s) + ".conv" + std::to_string(j));
        for (std::size_t j = 0; j < dec.size(); ++j)
            f(dec[j], "dec" + std::to_string(j) + ".conv");
        f(head, std::string("head"));
    }

    /// Flat parameter views in the fixed serialization order: per layer,
    /// weights then bias.
    std::vector<std::pair<T*, std::size_t>> views() {
        std::vector<std::pair<T*, std::size_t>> out;
        for_each_layer([&](ConvLayer<T>& l, const std::string&) {
            out.emplace_back(l.w.data.data(), l.w.data.size());
            out.emplace_back(l.b.data(), l.b.size());
        });
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto& [p, len] : views()) n += len;
        return n;
    }
};

template <typename T>
struct FcnModel {
    ArchConfig arch;
    FcnParams<T> params;
};

namespace detail {

inline int decoder_in_channels(const ArchConfig& a, int j) {
    int stages = a.stages();
    int up_ch = (j == 0) ? a.stage_widths[stages - 1] : a.stage_widths[stages - j];
    int skip_ch = a.stage_widths[stages - 1 - j];
    return up_ch + skip_ch;
}

}  // namespace detail

/// Initial head bias: the logit of a 1% foreground prior. Lesion pixels are
/// rare, and a head that starts near the class prior keeps early background
/// gradients from driving the whole logit map into sigmoid saturation, where
/// recovery costs hundreds of epochs.
inline constexpr double kHeadBiasInit = -4.59511985013459;  // -log(99)

/// Builds the parameter set with He-scaled normal initialization, fully
/// determined by the seed. Biases start at zero, except the head bias which
/// starts at kHeadBiasInit.
template <typename T>
inline FcnModel<T> build_model(const ArchConfig& arch, std::uint64_t seed) {
    arch.validate();
    FcnModel<T> model;
    model.arch = arch;
    Rng rng(splitmix64(seed));

    auto make_layer = [&](int in_ch, int out_ch, int k) {
        ConvLayer<T> layer;
        layer.w = Tensor4<T>(out_ch, in_ch, k, k);
        layer.b.assign(static_cast<std::size_t>(out_ch), T(0));
        double scale = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
        for (T& v : layer.w.data) v = static_cast<T>(rng.normal() * scale);
        return layer;
    };

    int stages = arch.stages();
    int prev = arch.in_channels;
    model.params.enc.resize(static_cast<std::size_t>(stages));
    for (int s = 0; s < stages; ++s) {
        for (int j = 0; j < arch.convs_per_stage; ++j) {
            model.params.enc[s].push_back(make_layer(prev, arch.stage_widths[s], arch.kernel));
            prev = arch.stage_widths[s];
        }
    }
    for (int j = 0; j < stages; ++j) {
        int out_ch = arch.stage_widths[stages - 1 - j];
        model.params.dec.push_back(make_layer(detail::decoder_in_channels(arch, j), out_ch, arch.kernel));
    }
    model.params.head = make_layer(arch.stage_widths[0], arch.out_channels, 1);
    for (T& b : model.params.head.b) b = static_cast<T>(kHeadBiasInit);
    return model;
}

/// Zero-filled parameter set with the same shapes as the model (gradient /
/// moment container).
template <typename T>
inline FcnParams<T> zero_like(const FcnModel<T>& model) {
    FcnParams<T> z;
    z.enc.resize(model.params.enc.size());
    auto zero_layer = [](const ConvLayer<T>& l) {
        ConvLayer<T> out;
        out.w = Tensor4<T>(l.w.n, l.w.c, l.w.h, l.w.w);
        out.b.assign(l.b.size(), T(0));
        return out;
    };
    for (std::size_t s = 0; s < model.params.enc.size(); ++s)
        for (const auto& l : model.params.enc[s]) z.enc[s].push_back(zero_layer(l));
    for (const auto& l : model.params.dec) z.dec.push_back(zero_layer(l));
    z.head = zero_layer(model.params.head);
    return z;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename T>
inline T sigmoid_clamped(T z) {
    constexpr double eps = sizeof(T) == 4 ? 1e-6 : 1e-12;
    double p;
    double zd = static_cast<double>(z);
    if (zd >= 0) {
        p = 1.0 / (1.0 + std::exp(-zd));
    } else {
        double e = std::exp(zd);
        p = e / (1.0 + e);
    }
    if (p < eps) p = eps;
    if (p > 1.0 - eps) p = 1.0 - eps;  // keeps the output strictly inside (0,1)
    return static_cast<T>(p);
}

template <typename T>
struct ForwardCache {
    Tensor4<T> input;
    std::vector<std::vector<Tensor4<T>>> enc_out;  // post-ReLU activations
    std::vector<PoolResult<T>> pools;
    std::vector<Tensor4<T>> dec_concat;
    std::vector<Tensor4<T>> dec_out;
    Tensor4<T> probs;
};

template <typename T>
inline const Tensor4<T>& forward_cached(const FcnModel<T>& model, const Tensor4<T>& batch,
                                        ForwardCache<T>& cache) {
    const ArchConfig& a = model.arch;
    require(batch.c == a.in_channels && batch.h == a.input_h && batch.w == a.input_w,
            "forward: batch shape " + batch.shape_str() + " does not match the architecture");
    int stages = a.stages();
    cache.input = batch;
    cache.enc_out.assign(static_cast<std::size_t>(stages), {});
    cache.pools.clear();
    cache.pools.resize(static_cast<std::size_t>(stages));
    cache.dec_concat.clear();
    cache.dec_concat.resize(static_cast<std::size_t>(stages));
    cache.dec_out.clear();
    cache.dec_out.resize(static_cast<std::size_t>(stages));

    const Tensor4<T>* cur = &cache.input;
    for (int s = 0; s < stages; ++s) {
        for (int j = 0; j < a.convs_per_stage; ++j) {
            const ConvLayer<T>& l = model.params.enc[s][j];
            Tensor4<T> out = conv2d(*cur, l.w, l.b, a.kernel / 2);
            relu_inplace(out);
            cache.enc_out[s].push_back(std::move(out));
            cur = &cache.enc_out[s].back();
        }
        cache.pools[s] = maxpool2(*cur);
        cur = &cache.pools[s].output;
    }
    for (int j = 0; j < stages; ++j) {
        Tensor4<T> up = upsample2(*cur);
        cache.dec_concat[j] = concat_channels(up, cache.enc_out[stages - 1 - j].back());
        const ConvLayer<T>& l = model.params.dec[j];
        Tensor4<T> out = conv2d(cache.dec_concat[j], l.w, l.b, a.kernel / 2);
        relu_inplace(out);
        cache.dec_out[j] = std::move(out);
        cur = &cache.dec_out[j];
    }
    cache.probs = conv2d(*cur, model.params.head.w, model.params.head.b, 0);
    for (T& v : cache.probs.data) v = sigmoid_clamped(v);
    return cache.probs;
}

/// Per-pixel probabilities, shape (batch, out_channels, input_h, input_w),
/// every value strictly in (0,1).
template <typename T>
inline Tensor4<T> forward(const FcnModel<T>& model, const Tensor4<T>& batch) {
    ForwardCache<T> cache;
    forward_cached(model, batch, cache);
    return std::move(cache.probs);
}

/// Backpropagates d(loss)/d(probs) through the whole network. The cache
/// must come from forward_cached on the same model and batch.
template <typename T>
inline FcnParams<T> backward_cached(const FcnModel<T>& model, const ForwardCache<T>& cache,
                                    const Tensor4<T>& grad_probs) {
    const ArchConfig& a = model.arch;
    require(grad_probs.same_shape(cache.probs), "backward: gradient shape mismatch");
    int stages = a.stages();
    FcnParams<T> grads = zero_like(model);

    // sigmoid head: dL/dz = dL/dp * p * (1-p)
    Tensor4<T> g = grad_probs;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
        T p = cache.probs.data[i];
        g.data[i] *= p * (T(1) - p);
    }
    {
        ConvGrads<T> cg = conv2d_backward(cache.dec_out[stages - 1], model.params.head.w, g, 0);
        grads.head.w = std::move(cg.weights);
        grads.head.b = std::move(cg.bias);
        g = std::move(cg.input);
    }

    std::vector<Tensor4<T>> skip_grads(static_cast<std::size_t>(stages));
    for (int j = stages - 1; j >= 0; --j) {
        relu_backward_inplace(g, cache.dec_out[j]);
        ConvGrads<T> cg = conv2d_backward(cache.dec_concat[j], model.params.dec[j].w, g, a.kernel / 2);
        grads.dec[j].w = std::move(cg.weights);
        grads.dec[j].b = std::move(cg.bias);
        int up_ch = cache.dec_concat[j].c - a.stage_widths[stages - 1 - j];
        Tensor4<T> g_up, g_skip;
        split_channels(cg.input, up_ch, g_up, g_skip);
        skip_grads[static_cast<std::size_t>(stages - 1 - j)] = std::move(g_skip);
        g = upsample2_backward(g_up);
    }

    for (int s = stages - 1; s >= 0; --s) {
        const Tensor4<T>& pre_pool = cache.enc_out[s].back();
        g = maxpool2_backward(g, cache.pools[s].argmax, pre_pool.h, pre_pool.w);
        Tensor4<T>& extra = skip_grads[static_cast<std::size_t>(s)];
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += extra.data[i];
        for (int j = a.convs_per_stage - 1; j >= 0; --j) {
            relu_backward_inplace(g, cache.enc_out[s][j]);
            const Tensor4<T>& in = (j > 0) ? cache.enc_out[s][j - 1]
                                 : (s > 0) ? cache.pools[s - 1].output
                                           : cache.input;
            ConvGrads<T> cg = conv2d_backward(in, model.params.enc[s][j].w, g, a.kernel / 2);
            grads.enc[s][j].w = std::move(cg.weights);
            grads.enc[s][j].b = std::move(cg.bias);
            g = std::move(cg.input);
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Loss: mean binary cross-entropy + (1 - soft Dice)
// ---------------------------------------------------------------------------

template <typename T>
struct LossResult {
    double loss = 0;
    double bce = 0;
    double soft_dice = 0;
    Tensor4<T> grad;  // d(loss)/d(probs)
};

/// Sums run over the whole tensor (batch included); sigma smooths the Dice
/// term so empty targets stay differentiable. pos_weight scales the positive
/// BCE term: lesion pixels are ~200x rarer than background, and an
/// unweighted BCE makes "predict background everywhere" a strong attractor
/// that short training runs cannot escape.
template <typename T>
inline LossResult<T> loss_bce_dice(const Tensor4<T>& probs, const Tensor4<T>& targets,
                                   double sigma = 1.0, double pos_weight = 1.0) {
    require(probs.same_shape(targets), "loss: probs/targets shape mismatch");
    require(pos_weight > 0.0, "loss: pos_weight must be > 0");
    for (T t : targets.data)
        require(t == T(0) || t == T(1), "loss: targets must be binary");

    const std::size_t n = probs.data.size();
    double bce = 0, inter = 0, sum_p = 0, sum_t = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double p = static_cast<double>(probs.data[i]);
        double t = static_cast<double>(targets.data[i]);
        bce -= pos_weight * t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
        inter += p * t;
        sum_p += p;
        sum_t += t;
    }
    bce /= static_cast<double>(n);
    double denom = sum_p + sum_t + sigma;
    double dice = (2.0 * inter + sigma) / denom;

    LossResult<T> r;
    r.bce = bce;
    r.soft_dice = dice;
    r.loss = bce + (1.0 - dice);
    r.grad = Tensor4<T>(probs.n, probs.c, probs.h, probs.w);
    const double inv_n = 1.0 / static_cast<double>(n);
    const double dice_num = 2.0 * inter + sigma;
    const double inv_denom2 = 1.0 / (denom * denom);
    for (std::size_t i = 0; i < n; ++i) {
        double p = static_cast<double>(probs.data[i]);
        double t = static_cast<double>(targets.data[i]);
        double g_bce = ((1.0 - t) / (1.0 - p) - pos_weight * t / p) * inv_n;
        double g_dice = (2.0 * t * denom - dice_num) * inv_denom2;
        r.grad.data[i] = static_cast<T>(g_bce - g_dice);
    }
    return r;
}

/// Full training-direction gradient for one batch: forward, loss, backward.
template <typename T>
struct BackwardResult {
    LossResult<T> loss;
    FcnParams<T> grads;
};

template <typename T>
inline BackwardResult<T> backward(const FcnModel<T>& model, const Tensor4<T>& batch,
                                  const Tensor4<T>& targets, double sigma = 1.0,
                                  double pos_weight = 1.0) {
    ForwardCache<T> cache;
    forward_cached(model, batch, cache);
    BackwardResult<T> r;
    r.loss = loss_bce_dice(cache.probs, targets, sigma, pos_weight);
    r.grads = backward_cached(model, cache, r.loss.grad);
    return r;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
    FcnParams<T> m, v;
    long long t = 0;
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
inline AdamState<T> make_adam(const FcnModel<T>& model, double lr = 1e-5) {
    AdamState<T> st;
    st.m = zero_like(model);
    st.v = zero_like(model);
    st.lr = lr;
    return st;
}

template <typename T>
inline void adam_step(FcnParams<T>& params, FcnParams<T>& grads, AdamState<T>& state) {
    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    auto pv = params.views();
    auto gv = grads.views();
    auto mv = state.m.views();
    auto vv = state.v.views();
    require(pv.size() == gv.size() && pv.size() == mv.size() && pv.size() == vv.size(),
            "adam_step: parameter/gradient structure mismatch");
    for (std::size_t k = 0; k < pv.size(); ++k) {
        require(pv[k].second == gv[k].second, "adam_step: gradient shape mismatch");
        T* p = pv[k].first;
        const T* g = gv[k].first;
        T* m = mv[k].first;
        T* v = vv[k].first;
        for (std::size_t i = 0; i < pv[k].second; ++i) {
            double gi = static_cast<double>(g[i]);
            double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * gi;
            double vi = state.beta2 * static_cast<double>(v[i]) + (1.0 - state.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            double update = state.lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps);
            p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

struct GradCheckEntry {
    std::string layer;
    double max_rel_error = 0;
};

struct GradCheckReport {
    double max_rel_error = 0;
    std::string worst_layer;
    double tolerance = 1e-4;
    bool passed = false;
    std::vector<GradCheckEntry> per_layer;
};

/// Central-difference check of every parameter gradient. Meant for small
/// models in double precision; cost is two forwards per parameter.
inline GradCheckReport grad_check(FcnModel<double>& model, const Tensor4<double>& batch,
                                  const Tensor4<double>& targets, double tolerance = 1e-4,
                                  double step = 1e-5, double sigma = 1.0,
                                  double pos_weight = 1.0) {
    BackwardResult<double> analytic = backward(model, batch, targets, sigma, pos_weight);

    GradCheckReport report;
    report.tolerance = tolerance;

    auto loss_at = [&]() {
        Tensor4<double> probs = forward(model, batch);
        return loss_bce_dice(probs, targets, sigma, pos_weight).loss;
    };

    std::vector<std::string> names;
    model.params.for_each_layer([&](ConvLayer<double>&, const std::string& name) {
        names.push_back(name);
        names.push_back(name + ".bias");
    });
    auto pv = model.params.views();
    auto gv = analytic.grads.views();
    for (std::size_t k = 0; k < pv.size(); ++k) {
        GradCheckEntry entry;
        entry.layer = names[k];
        for (std::size_t i = 0; i < pv[k].second; ++i) {
            double saved = pv[k].first[i];
            pv[k].first[i] = saved + step;
            double up = loss_at();
            pv[k].first[i] = saved - step;
            double down = loss_at();
            pv[k].first[i] = saved;
            double fd = (up - down) / (2.0 * step);
            double a = gv[k].first[i];
            double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1e-6});
            if (rel > entry.max_rel_error) entry.max_rel_error = rel;
        }
        if (entry.max_rel_error > report.max_rel_error) {
            report.max_rel_error = entry.max_rel_error;
            report.worst_layer = entry.layer;
        }
        report.per_layer.push_back(entry);
    }
    report.passed = report.max_rel_error <= tolerance;
    return report;
}

// ---------------------------------------------------------------------------
// Serialization: JSON header + little-endian float64 parameter blob in the
// views() order, optionally followed by the Adam moments.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kCheckpointMagic[8] = {'M', 'C', 'A', 'D', 'O', 'T', 'C', '1'};

inline nlohmann::json arch_to_json(const ArchConfig& a) {
    return nlohmann::json{{"stage_widths", a.stage_widths},
                          {"convs_per_stage", a.convs_per_stage},
                          {"kernel", a.kernel},
                          {"in_channels", a.in_channels},
                          {"out_channels", a.out_channels},
                          {"input_h", a.input_h},
                          {"input_w", a.input_w}};
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
    ArchConfig a;
    a.stage_widths = j.at("stage_widths").get<std::vector<int>>();
    a.convs_per_stage = j.at("convs_per_stage").get<int>();
    a.kernel = j.at("kernel").get<int>();
    a.in_channels = j.at("in_channels").get<int>();
    a.out_channels = j.at("out_channels").get<int>();
    a.input_h = j.at("input_h").get<int>();
    a.input_w = j.at("input_w").get<int>();
    return a;
}

template <typename T>
inline void append_blob(std::vector<unsigned char>& buf, FcnParams<T>& params) {
    for (auto& [p, n] : params.views())
        for (std::size_t i = 0; i < n; ++i) store_le<double>(buf, static_cast<double>(p[i]));
}

template <typename T>
inline std::size_t read_blob(const std::vector<unsigned char>& buf, std::size_t off,
                             FcnParams<T>& params, const std::string& path) {
    for (auto& [p, n] : params.views()) {
        require(off + n * 8 <= buf.size(), path + ": checkpoint blob truncated");
        for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<T>(load_le<double>(buf.data() + off + 8 * i));
        off += n * 8;
    }
    return off;
}

}  // namespace detail

template <typename T>
struct Checkpoint {
    FcnModel<T> model;
    AdamState<T> adam;      // valid only when has_adam
    bool has_adam = false;
    long long epoch = 0;    // completed training epochs
};

template <typename T>
inline void save_checkpoint(FcnModel<T>& model, AdamState<T>* adam, long long epoch,
                            const std::string& path) {
    nlohmann::json header;
    header["arch"] = detail::arch_to_json(model.arch);
    header["epoch"] = epoch;
    header["step"] = adam ? adam->t : 0;
    header["has_adam"] = adam != nullptr;
    if (adam) {
        header["lr"] = adam->lr;
        header["beta1"] = adam->beta1;
        header["beta2"] = adam->beta2;
        header["eps"] = adam->eps;
    }
    header["param_count"] = model.params.parameter_count();
    std::string htext = header.dump();

    std::vector<unsigned char> buf;
    buf.insert(buf.end(), detail::kCheckpointMagic, detail::kCheckpointMagic + 8);
    store_le<uint32_t>(buf, static_cast<uint32_t>(htext.size()));
    buf.insert(buf.end(), htext.begin(), htext.end());
    detail::append_blob(buf, model.params);
    if (adam) {
        detail::append_blob(buf, adam->m);
        detail::append_blob(buf, adam->v);
    }
    write_file_bytes(path, buf.data(), buf.size());
}

template <typename T>
inline Checkpoint<T> load_checkpoint(const std::string& path, const ArchConfig* expected = nullptr) {
    std::vector<unsigned char> buf = read_file_bytes(path);
    require(buf.size() >= 12 && std::memcmp(buf.data(), detail::kCheckpointMagic, 8) == 0,
            path + ": not a checkpoint file");
    uint32_t hlen = load_le<uint32_t>(buf.data() + 8);
    require(buf.size() >= 12 + static_cast<std::size_t>(hlen), path + ": checkpoint header truncated");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.begin() + 12, buf.begin() + 12 + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw data_error(path + ": bad checkpoint header: " + e.what());
    }
    ArchConfig arch = detail::arch_from_json(header.at("arch"));
    if (expected)
        require(arch == *expected,
                path + ": checkpoint architecture does not match the requested architecture");

    Checkpoint<T> ck;
    ck.model = build_model<T>(arch, 0);
    require(header.at("param_count").get<std::size_t>() == ck.model.params.parameter_count(),
            path + ": checkpoint parameter count mismatch");
    std::size_t off = 12 + hlen;
    off = detail::read_blob(buf, off, ck.model.params, path);
    ck.epoch = header.value("epoch", 0LL);
    ck.has_adam = header.value("has_adam", false);
    if (ck.has_adam) {
        ck.adam = make_adam(ck.model);
        ck.adam.t = header.value("step", 0LL);
        ck.adam.lr = header.value("lr", 1e-5);
        ck.adam.beta1 = header.value("beta1", 0.9);
        ck.adam.beta2 = header.value("beta2", 0.999);
        ck.adam.eps = header.value("eps", 1e-8);
        off = detail::read_blob(buf, off, ck.adam.m, path);
        off = detail::read_blob(buf, off, ck.adam.v, path);
    }
    require(off == buf.size(), path + ": checkpoint has trailing bytes");
    return ck;
}

// ---------------------------------------------------------------------------
// Deterministic batch-parallel forward/backward (per-sample partitioning,
// fixed-order gradient reduction).
// ---------------------------------------------------------------------------

template <typename T>
inline void accumulate(FcnParams<T>& into, FcnParams<T>& from) {
    auto a = into.views();
    auto b = from.views();
    for (std::size_t k = 0; k < a.size(); ++k)
        for (std::size_t i = 0; i < a[k].second; ++i) a[k].first[i] += b[k].first[i];
}

template <typename T>
inline Tensor4<T> sample_view_copy(const Tensor4<T>& batch, int b) {
    Tensor4<T> s(1, batch.c, batch.h, batch.w);
    std::copy(batch.sample(b), batch.sample(b) + batch.sample_size(), s.data.data());
    return s;
}

/// One optimizer-direction evaluation over a batch. Samples run in
/// parallel; the loss couples them (batch-global Dice sums), so per-sample
/// backprop happens after the loss gradient is computed, and gradients are
/// reduced in sample order so the result is independent of scheduling.
template <typename T>
inline BackwardResult<T> batch_forward_backward(const FcnModel<T>& model, const Tensor4<T>& batch,
                                                const Tensor4<T>& targets, double sigma,
                                                int workers, double pos_weight = 1.0) {
    require(batch.n >= 1, "batch_forward_backward: empty batch");
    const int n = batch.n;
    std::vector<ForwardCache<T>> caches(static_cast<std::size_t>(n));
    Tensor4<T> probs(batch.n, model.arch.out_channels, batch.h, batch.w);
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t i) {
        Tensor4<T> one = sample_view_copy(batch, static_cast<int>(i));
        forward_cached(model, one, caches[i]);
        std::copy(caches[i].probs.data.begin(), caches[i].probs.data.end(),
                  probs.sample(static_cast<int>(i)));
    });

    BackwardResult<T> result;
    result.loss = loss_bce_dice(probs, targets, sigma);

    std::vector<FcnParams<T>> partial(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t i) {
        Tensor4<T> g = sample_view_copy(result.loss.grad, static_cast<int>(i));
        partial[i] = backward_cached(model, caches[i], g);
        caches[i] = ForwardCache<T>{};  // release activation memory early
    });
    result.grads = std::move(partial[0]);
    for (int i = 1; i < n; ++i) accumulate(result.grads, partial[static_cast<std::size_t>(i)]);
    return result;
}

}  // namespace mcadot::nnet

#endif
