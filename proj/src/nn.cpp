#include "demf/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <new>
#include "json.hpp"

#include "demf/array_io.hpp"
#include "demf/error.hpp"
#include "demf/rng.hpp"

namespace demf::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using MapRowConst = Eigen::Map<const RowMat>;

// Upper bound on the im2col buffer per chunk (floats).
constexpr std::size_t kChunkFloats = std::size_t{8} << 20;

// Reusable 64-byte aligned scratch. Contents are not initialized; every user overwrites them.
class Scratch {
public:
    float* get(std::size_t n) {
        if (n > size_) {
            buf_.reset(static_cast<float*>(std::aligned_alloc(64, ((n * sizeof(float) + 63) / 64) * 64)));
            if (!buf_) throw std::bad_alloc();
            size_ = n;
        }
        return buf_.get();
    }

private:
    struct Free {
        void operator()(float* p) const { std::free(p); }
    };
    std::unique_ptr<float, Free> buf_;
    std::size_t size_ = 0;
};

Scratch& scratch(int slot) {
    thread_local Scratch slots[3];
    return slots[slot];
}

int chunk_samples(int n, std::size_t rows, std::size_t plane) {
    const std::size_t per_sample = std::max<std::size_t>(1, rows * plane);
    return static_cast<int>(std::clamp<std::size_t>(kChunkFloats / per_sample, 1, static_cast<std::size_t>(n)));
}

void im2col(const Tensor& x, int n0, int m, int k, float* cols) {
    const int c = x.c(), h = x.h(), w = x.w(), pad = k / 2;
    const std::size_t hw = x.plane();
    const std::size_t row_len = hw * m;
    for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                float* dst_row = cols + static_cast<std::size_t>((ci * k + ky) * k + kx) * row_len;
                const int x_lo = std::max(0, pad - kx);
                const int x_hi = std::min(w, w + pad - kx);
                for (int s = 0; s < m; ++s) {
                    const float* src = x.sample(n0 + s) + ci * hw;
                    float* dst = dst_row + s * hw;
                    for (int y = 0; y < h; ++y) {
                        float* d = dst + static_cast<std::size_t>(y) * w;
                        const int sy = y + ky - pad;
                        if (sy < 0 || sy >= h || x_lo >= x_hi) {
                            std::fill(d, d + w, 0.0f);
                            continue;
                        }
                        std::fill(d, d + x_lo, 0.0f);
                        std::memcpy(d + x_lo, src + static_cast<std::size_t>(sy) * w + (x_lo + kx - pad),
                                    sizeof(float) * (x_hi - x_lo));
                        std::fill(d + x_hi, d + w, 0.0f);
                    }
                }
            }
}

void col2im(const float* cols, int n0, int m, int k, Tensor& dx) {
    const int c = dx.c(), h = dx.h(), w = dx.w(), pad = k / 2;
    const std::size_t hw = dx.plane();
    const std::size_t row_len = hw * m;
    for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const float* src_row = cols + static_cast<std::size_t>((ci * k + ky) * k + kx) * row_len;
                const int x_lo = std::max(0, pad - kx);
                const int x_hi = std::min(w, w + pad - kx);
                for (int s = 0; s < m; ++s) {
                    float* dst = dx.sample(n0 + s) + ci * hw;
                    const float* src = src_row + s * hw;
                    for (int y = 0; y < h; ++y) {
                        const int sy = y + ky - pad;
                        if (sy < 0 || sy >= h) continue;
                        const float* sr = src + static_cast<std::size_t>(y) * w;
                        float* dr = dst + static_cast<std::size_t>(sy) * w + (kx - pad);
                        for (int xx = x_lo; xx < x_hi; ++xx) dr[xx] += sr[xx];
                    }
                }
            }
}

Parameter make_param(std::string name, std::vector<int> shape) {
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    return Parameter{std::move(name), std::move(shape), FloatBuffer(count, 0.0f),
                     FloatBuffer(count, 0.0f)};
}

void require_input(const Tensor& cached, const char* layer) {
    if (cached.size() == 0)
        throw StateError(std::string(layer) + ": backward() without a preceding forward_train()");
}

} // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(int n, int c, int h, int w, float fill)
    : n_(n), c_(c), h_(h), w_(w),
      data_(static_cast<std::size_t>(n) * c * h * w, fill) {
    if (n < 0 || c < 0 || h < 0 || w < 0) throw DataError("negative tensor dimension");
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel)
    : in_(in_channels), out_(out_channels), k_(kernel),
      weight_(make_param("weight", {out_channels, in_channels, kernel, kernel})),
      bias_(make_param("bias", {out_channels})) {
    if (in_channels < 1 || out_channels < 1) throw ConfigError("conv2d: channel counts must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("conv2d: kernel must be odd and positive");
}

Tensor Conv2d::forward(const Tensor& x) const {
    if (x.c() != in_)
        throw DataError("conv2d: expected " + std::to_string(in_) + " input channels, got " +
                        std::to_string(x.c()));
    const int n = x.n();
    const std::size_t hw = x.plane();
    const std::size_t kk = static_cast<std::size_t>(in_) * k_ * k_;
    Tensor out(n, out_, x.h(), x.w());
    if (n == 0 || hw == 0) return out;

    const int chunk = chunk_samples(n, kk, hw);
    float* cols = scratch(0).get(kk * hw * chunk);
    float* res = scratch(1).get(static_cast<std::size_t>(out_) * hw * chunk);
    MapRowConst wmat(weight_.value.data(), out_, static_cast<Eigen::Index>(kk));

    for (int n0 = 0; n0 < n; n0 += chunk) {
        const int m = std::min(chunk, n - n0);
        const auto width = static_cast<Eigen::Index>(hw * m);
        im2col(x, n0, m, k_, cols);
        MapRowConst cmat(cols, static_cast<Eigen::Index>(kk), width);
        MapRow rmat(res, out_, width);
        rmat.noalias() = wmat * cmat;
        for (int s = 0; s < m; ++s)
            for (int co = 0; co < out_; ++co) {
                const float* src = res + static_cast<std::size_t>(co) * hw * m + s * hw;
                float* dst = out.sample(n0 + s) + co * hw;
                const float b = bias_.value[co];
                for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] + b;
            }
    }
    return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    require_input(input_, "conv2d");
    const Tensor& x = input_;
    const int n = x.n();
    const std::size_t hw = x.plane();
    const std::size_t kk = static_cast<std::size_t>(in_) * k_ * k_;
    Tensor dx(n, in_, x.h(), x.w());
    if (n == 0 || hw == 0) return dx;

    const int chunk = chunk_samples(n, kk, hw);
    float* cols = scratch(0).get(kk * hw * chunk);
    float* dcols = scratch(1).get(kk * hw * chunk);
    float* dout = scratch(2).get(static_cast<std::size_t>(out_) * hw * chunk);
    MapRowConst wmat(weight_.value.data(), out_, static_cast<Eigen::Index>(kk));
    MapRow dwmat(weight_.grad.data(), out_, static_cast<Eigen::Index>(kk));

    for (int n0 = 0; n0 < n; n0 += chunk) {
        const int m = std::min(chunk, n - n0);
        const auto width = static_cast<Eigen::Index>(hw * m);
        for (int s = 0; s < m; ++s)
            for (int co = 0; co < out_; ++co)
                std::memcpy(dout + static_cast<std::size_t>(co) * hw * m + s * hw,
                            grad_out.sample(n0 + s) + co * hw, sizeof(float) * hw);
        im2col(x, n0, m, k_, cols);
        MapRowConst cmat(cols, static_cast<Eigen::Index>(kk), width);
        MapRowConst gmat(dout, out_, width);
        dwmat.noalias() += gmat * cmat.transpose();
        for (int co = 0; co < out_; ++co) bias_.grad[co] += gmat.row(co).sum();
        MapRow dcmat(dcols, static_cast<Eigen::Index>(kk), width);
        dcmat.noalias() = wmat.transpose() * gmat;
        col2im(dcols, n0, m, k_, dx);
    }
    return dx;
}

// ---------------------------------------------------------------- Dense

Dense::Dense(int in_features, int out_features)
    : in_(in_features), out_(out_features),
      weight_(make_param("weight", {out_features, in_features})),
      bias_(make_param("bias", {out_features})) {
    if (in_features < 1 || out_features < 1) throw ConfigError("dense: feature counts must be >= 1");
}

Tensor Dense::forward(const Tensor& x) const {
    const std::size_t per = static_cast<std::size_t>(x.c()) * x.plane();
    if (per != static_cast<std::size_t>(in_))
        throw DataError("dense: expected " + std::to_string(in_) + " features, got " + std::to_string(per));
    Tensor out(x.n(), out_, 1, 1);
    MapRowConst xm(x.data(), x.n(), in_);
    MapRowConst wm(weight_.value.data(), out_, in_);
    MapRow om(out.data(), x.n(), out_);
    om.noalias() = xm * wm.transpose();
    for (int i = 0; i < x.n(); ++i)
        for (int o = 0; o < out_; ++o) om(i, o) += bias_.value[o];
    return out;
}

Tensor Dense::backward(const Tensor& grad_out) {
    require_input(input_, "dense");
    const Tensor& x = input_;
    Tensor dx(x.n(), x.c(), x.h(), x.w());
    MapRowConst xm(x.data(), x.n(), in_);
    MapRowConst gm(grad_out.data(), x.n(), out_);
    MapRowConst wm(weight_.value.data(), out_, in_);
    MapRow dwm(weight_.grad.data(), out_, in_);
    dwm.noalias() += gm.transpose() * xm;
    for (int o = 0; o < out_; ++o) bias_.grad[o] += gm.col(o).sum();
    MapRow dxm(dx.data(), x.n(), in_);
    dxm.noalias() = gm * wm;
    return dx;
}

// ---------------------------------------------------------------- activations

Tensor Relu::forward(const Tensor& x) const {
    Tensor out = x;
    for (float& v : out.values()) v = v > 0.0f ? v : 0.0f;
    return out;
}

Tensor Relu::backward(const Tensor& grad_out) {
    require_input(input_, "relu");
    Tensor dx = grad_out;
    auto in = input_.values();
    auto d = dx.values();
    for (std::size_t i = 0; i < d.size(); ++i)
        if (!(in[i] > 0.0f)) d[i] = 0.0f;
    return dx;
}

Tensor RectifiedTanh::forward(const Tensor& x) const {
    Tensor out = x;
    for (float& v : out.values()) v = v > 0.0f ? std::tanh(v) : 0.0f;
    return out;
}

Tensor RectifiedTanh::backward(const Tensor& grad_out) {
    require_input(input_, "rectified_tanh");
    Tensor dx = grad_out;
    auto in = input_.values();
    auto d = dx.values();
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (in[i] > 0.0f) {
            const float y = std::tanh(in[i]);
            d[i] *= 1.0f - y * y;
        } else {
            d[i] = 0.0f;
        }
    }
    return dx;
}

double sigmoid(double z) noexcept {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Tensor Sigmoid::forward(const Tensor& x) const {
    Tensor out = x;
    for (float& v : out.values()) v = static_cast<float>(sigmoid(v));
    return out;
}

Tensor Sigmoid::backward(const Tensor& grad_out) {
    require_input(input_, "sigmoid");
    Tensor dx = grad_out;
    auto in = input_.values();
    auto d = dx.values();
    for (std::size_t i = 0; i < d.size(); ++i) {
        const float y = static_cast<float>(sigmoid(in[i]));
        d[i] *= y * (1.0f - y);
    }
    return dx;
}

// ---------------------------------------------------------------- spatial

Tensor MaxPool2d::forward(const Tensor& x) const {
    const int oh = x.h() / 2, ow = x.w() / 2;
    Tensor out(x.n(), x.c(), oh, ow);
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
            const float* src = x.sample(n) + c * x.plane();
            float* dst = out.sample(n) + c * out.plane();
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    const float* p = src + static_cast<std::size_t>(2 * y) * x.w() + 2 * xx;
                    dst[y * ow + xx] = std::max(std::max(p[0], p[1]), std::max(p[x.w()], p[x.w() + 1]));
                }
        }
    return out;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
    require_input(input_, "maxpool2d");
    const Tensor& x = input_;
    Tensor dx(x.n(), x.c(), x.h(), x.w());
    const int oh = x.h() / 2, ow = x.w() / 2;
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
            const float* src = x.sample(n) + c * x.plane();
            float* dst = dx.sample(n) + c * x.plane();
            const float* g = grad_out.sample(n) + c * grad_out.plane();
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    const std::size_t base = static_cast<std::size_t>(2 * y) * x.w() + 2 * xx;
                    const std::size_t cand[4] = {base, base + 1, base + x.w(), base + x.w() + 1};
                    std::size_t best = cand[0];
                    for (int i = 1; i < 4; ++i)
                        if (src[cand[i]] > src[best]) best = cand[i];
                    dst[best] += g[y * ow + xx];
                }
        }
    return dx;
}

Tensor Upsample2d::forward(const Tensor& x) const {
    const int oh = x.h() * 2, ow = x.w() * 2;
    Tensor out(x.n(), x.c(), oh, ow);
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
            const float* src = x.sample(n) + c * x.plane();
            float* dst = out.sample(n) + c * out.plane();
            for (int y = 0; y < oh; ++y) {
                const float* sr = src + static_cast<std::size_t>(y / 2) * x.w();
                float* dr = dst + static_cast<std::size_t>(y) * ow;
                for (int xx = 0; xx < ow; ++xx) dr[xx] = sr[xx / 2];
            }
        }
    return out;
}

Tensor Upsample2d::backward(const Tensor& grad_out) {
    require_input(input_, "upsample2d");
    const Tensor& x = input_;
    Tensor dx(x.n(), x.c(), x.h(), x.w());
    const int ow = grad_out.w();
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
            const float* g = grad_out.sample(n) + c * grad_out.plane();
            float* dst = dx.sample(n) + c * x.plane();
            for (int y = 0; y < grad_out.h(); ++y)
                for (int xx = 0; xx < ow; ++xx)
                    dst[static_cast<std::size_t>(y / 2) * x.w() + xx / 2] += g[static_cast<std::size_t>(y) * ow + xx];
        }
    return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x) const {
    Tensor out(x.n(), x.c(), 1, 1);
    const std::size_t hw = x.plane();
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
            const float* src = x.sample(n) + c * hw;
            double s = 0.0;
            for (std::size_t p = 0; p < hw; ++p) s += src[p];
            out.at(n, c, 0, 0) = hw ? static_cast<float>(s / static_cast<double>(hw)) : 0.0f;
        }
    return out;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
    require_input(input_, "global_avg_pool");
    const Tensor& x = input_;
    Tensor dx(x.n(), x.c(), x.h(), x.w());
    const std::size_t hw = x.plane();
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
            const float g = grad_out.at(n, c, 0, 0) / static_cast<float>(hw);
            float* dst = dx.sample(n) + c * hw;
            std::fill(dst, dst + hw, g);
        }
    return dx;
}

Tensor GlobalMaxPool::forward(const Tensor& x) const {
    Tensor out(x.n(), x.c(), 1, 1);
    const std::size_t hw = x.plane();
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
            const float* src = x.sample(n) + c * hw;
            out.at(n, c, 0, 0) = hw ? *std::max_element(src, src + hw) : 0.0f;
        }
    return out;
}

Tensor GlobalMaxPool::backward(const Tensor& grad_out) {
    require_input(input_, "global_max_pool");
    const Tensor& x = input_;
    Tensor dx(x.n(), x.c(), x.h(), x.w());
    const std::size_t hw = x.plane();
    if (hw == 0) return dx;
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
            const float* src = x.sample(n) + c * hw;
            const auto best = static_cast<std::size_t>(std::max_element(src, src + hw) - src);
            dx.sample(n)[c * hw + best] = grad_out.at(n, c, 0, 0);
        }
    return dx;
}

Tensor SummaryFeatures::forward(const Tensor& x) const {
    Tensor out(x.n(), 2, 1, 1);
    const std::size_t hw = x.plane();
    if (hw == 0) throw DataError("summary_features: empty input");
    for (int n = 0; n < x.n(); ++n) {
        const float* src = x.sample(n);
        double s = 0.0;
        float mx = src[0];
        for (std::size_t p = 0; p < hw; ++p) {
            s += src[p];
            mx = std::max(mx, src[p]);
        }
        out.at(n, 0, 0, 0) = static_cast<float>(s / static_cast<double>(hw));
        out.at(n, 1, 0, 0) = mx;
    }
    return out;
}

Tensor SummaryFeatures::backward(const Tensor& grad_out) {
    require_input(input_, "summary_features");
    const Tensor& x = input_;
    Tensor dx(x.n(), x.c(), x.h(), x.w());
    const std::size_t hw = x.plane();
    for (int n = 0; n < x.n(); ++n) {
        const float* src = x.sample(n);
        float* dst = dx.sample(n);
        const float gmean = grad_out.at(n, 0, 0, 0) / static_cast<float>(hw);
        std::size_t arg = 0;
        for (std::size_t p = 0; p < hw; ++p) {
            dst[p] = gmean;
            if (src[p] > src[arg]) arg = p;
        }
        dst[arg] += grad_out.at(n, 1, 0, 0);
    }
    return dx;
}

// ---------------------------------------------------------------- Sequential

Sequential::Sequential(const Sequential& other) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
    if (this != &other) {
        Sequential tmp(other);
        layers_ = std::move(tmp.layers_);
    }
    return *this;
}

Sequential& Sequential::add(std::unique_ptr<Layer> layer) {
    layers_.push_back(std::move(layer));
    return *this;
}

Tensor Sequential::forward(const Tensor& x) const {
    Tensor cur = x;
    for (const auto& l : layers_) cur = l->forward(cur);
    return cur;
}

Tensor Sequential::forward_train(const Tensor& x, int tap, Tensor* tap_out) {
    Tensor cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        cur = layers_[i]->forward_train(cur);
        if (tap_out && static_cast<int>(i) == tap) *tap_out = cur;
    }
    return cur;
}

Tensor Sequential::backward(const Tensor& grad_out, int tap, Tensor* tap_grad) {
    Tensor g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        if (tap_grad && static_cast<int>(i) == tap) *tap_grad = g;
        g = layers_[i]->backward(g);
    }
    return g;
}

std::vector<Parameter*> Sequential::parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers_)
        for (Parameter* p : l->parameters()) out.push_back(p);
    return out;
}

void Sequential::zero_grad() {
    for (Parameter* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
}

std::size_t Sequential::parameter_count() {
    std::size_t n = 0;
    for (Parameter* p : parameters()) n += p->value.size();
    return n;
}

void Sequential::initialize(std::uint64_t seed) {
    Rng rng(seed);
    auto glorot = [&rng](Parameter& w, double fan_in, double fan_out) {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (float& v : w.value) v = static_cast<float>(rng.uniform(-limit, limit));
    };
    for (auto& l : layers_) {
        if (auto* conv = dynamic_cast<Conv2d*>(l.get())) {
            const double kk = static_cast<double>(conv->kernel()) * conv->kernel();
            glorot(conv->weight(), conv->in_channels() * kk, conv->out_channels() * kk);
            std::fill(conv->bias().value.begin(), conv->bias().value.end(), 0.0f);
        } else if (auto* dense = dynamic_cast<Dense*>(l.get())) {
            glorot(dense->weight(), dense->weight().shape[1], dense->weight().shape[0]);
            std::fill(dense->bias().value.begin(), dense->bias().value.end(), 0.0f);
        }
    }
}

// ---------------------------------------------------------------- Adam

Adam::Adam(std::vector<Parameter*> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    if (!(opts_.learning_rate > 0.0)) throw ConfigError("adam: learning rate must be positive");
    if (opts_.decay < 0.0) throw ConfigError("adam: decay must be non-negative");
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.size(), 0.0f);
        v_.emplace_back(p->value.size(), 0.0f);
    }
}

void Adam::step() {
    const double lr = opts_.learning_rate / (1.0 + opts_.decay * static_cast<double>(t_));
    ++t_;
    const double t = static_cast<double>(t_);
    const double lr_t = lr * std::sqrt(1.0 - std::pow(opts_.beta2, t)) / (1.0 - std::pow(opts_.beta1, t));
    const float b1 = static_cast<float>(opts_.beta1), b2 = static_cast<float>(opts_.beta2);
    const float eps = static_cast<float>(opts_.epsilon), step = static_cast<float>(lr_t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& val = params_[i]->value;
        const auto& g = params_[i]->grad;
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < val.size(); ++j) {
            m[j] = b1 * m[j] + (1.0f - b1) * g[j];
            v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
            val[j] -= step * m[j] / (std::sqrt(v[j]) + eps);
        }
    }
}

// ---------------------------------------------------------------- losses

LossResult bce_with_logits(const Tensor& logits, std::span<const float> targets) {
    if (logits.size() != targets.size())
        throw DataError("bce: logits and targets differ in length");
    LossResult r{0.0, Tensor(logits.n(), logits.c(), logits.h(), logits.w())};
    const std::size_t n = targets.size();
    if (n == 0) return r;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = logits.data()[i];
        const double y = targets[i];
        // max(z,0) - z*y + log(1 + exp(-|z|))
        total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        r.grad.data()[i] = static_cast<float>((sigmoid(z) - y) / static_cast<double>(n));
    }
    r.loss = total / static_cast<double>(n);
    return r;
}

LossResult mse(const Tensor& prediction, const Tensor& target) {
    if (!prediction.same_shape(target)) throw DataError("mse: shape mismatch");
    LossResult r{0.0, Tensor(prediction.n(), prediction.c(), prediction.h(), prediction.w())};
    const std::size_t n = prediction.size();
    if (n == 0) return r;
    double total = 0.0;
    const double scale = 2.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(prediction.data()[i]) - target.data()[i];
        total += d * d;
        r.grad.data()[i] = static_cast<float>(scale * d);
    }
    r.loss = total / static_cast<double>(n);
    return r;
}

// ---------------------------------------------------------------- persistence

void save_parameters(Sequential& net, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json index = nlohmann::ordered_json::array();
    std::size_t counter = 0;
    for (std::size_t li = 0; li < net.size(); ++li)
        for (Parameter* p : net.layer(li).parameters()) {
            const std::string name = "layer" + std::to_string(li) + "." + p->name;
            const std::string file = "param_" + std::to_string(counter++) + ".dfa";
            const int rows = p->shape.empty() ? 1 : p->shape.front();
            const int cols = rows == 0 ? 0 : static_cast<int>(p->value.size() / rows);
            write_array(dir / file, rows, cols, p->value, {{"name", name}});
            index.push_back({{"name", name}, {"shape", p->shape}, {"file", file}});
        }
    std::ofstream out(dir / "index.json");
    if (!out) throw DataError("cannot write " + (dir / "index.json").string());
    out << index.dump(2) << '\n';
}

void load_parameters(Sequential& net, const std::filesystem::path& dir) {
    std::ifstream in(dir / "index.json");
    if (!in) throw DataError("missing parameter index in " + dir.string());
    const auto index = nlohmann::json::parse(in);
    std::size_t i = 0;
    for (std::size_t li = 0; li < net.size(); ++li)
        for (Parameter* p : net.layer(li).parameters()) {
            if (i >= index.size()) throw DataError("checkpoint has fewer parameters than the network");
            const auto& entry = index[i++];
            if (entry.at("shape").get<std::vector<int>>() != p->shape)
                throw DataError("checkpoint shape mismatch for " + entry.at("name").get<std::string>());
            auto raw = read_raw_array(dir / entry.at("file").get<std::string>());
            if (raw.values.size() != p->value.size())
                throw DataError("checkpoint size mismatch for " + entry.at("name").get<std::string>());
            p->value.assign(raw.values.begin(), raw.values.end());
            std::fill(p->grad.begin(), p->grad.end(), 0.0f);
        }
    if (i != index.size()) throw DataError("checkpoint has more parameters than the network");
}

} // namespace demf::nn
