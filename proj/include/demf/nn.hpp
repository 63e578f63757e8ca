#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace demf::nn {

// Storage aligned to Eigen's widest packet, so vectorized kernels take the
// same path on every allocation and results do not depend on heap layout.
using FloatBuffer = std::vector<float, Eigen::aligned_allocator<float>>;

// Dense NCHW float tensor.
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w, float fill = 0.0f);

    int n() const noexcept { return n_; }
    int c() const noexcept { return c_; }
    int h() const noexcept { return h_; }
    int w() const noexcept { return w_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(h_) * w_; }
    bool same_shape(const Tensor& o) const noexcept {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }

    float& at(int n, int c, int h, int w) noexcept { return data_[index(n, c, h, w)]; }
    float at(int n, int c, int h, int w) const noexcept { return data_[index(n, c, h, w)]; }

    float* sample(int n) noexcept { return data_.data() + static_cast<std::size_t>(n) * c_ * plane(); }
    const float* sample(int n) const noexcept {
        return data_.data() + static_cast<std::size_t>(n) * c_ * plane();
    }

private:
    std::size_t index(int n, int c, int h, int w) const noexcept {
        return ((static_cast<std::size_t>(n) * c_ + c) * h_ + h) * w_ + w;
    }

    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    FloatBuffer data_;
};

struct Parameter {
    std::string name;
    std::vector<int> shape;
    FloatBuffer value;
    FloatBuffer grad;
};

// A layer caches whatever it needs for backward() during forward_train().
// forward() is const and safe to call concurrently on a shared layer.
class Layer {
public:
    virtual ~Layer() = default;

    virtual std::string kind() const = 0;
    virtual Tensor forward(const Tensor& x) const = 0;
    virtual Tensor forward_train(const Tensor& x) {
        input_ = x;
        return forward(x);
    }
    // Gradient w.r.t. the layer input; parameter gradients are accumulated.
    virtual Tensor backward(const Tensor& grad_out) = 0;
    virtual std::vector<Parameter*> parameters() { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;

protected:
    Tensor input_;
};

class Conv2d final : public Layer {
public:
    // Stride 1, zero "same" padding; kernel must be odd.
    Conv2d(int in_channels, int out_channels, int kernel);

    std::string kind() const override { return "conv2d"; }
    Tensor forward(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

    int in_channels() const noexcept { return in_; }
    int out_channels() const noexcept { return out_; }
    int kernel() const noexcept { return k_; }
    Parameter& weight() noexcept { return weight_; }
    Parameter& bias() noexcept { return bias_; }

private:
    int in_, out_, k_;
    Parameter weight_;  // [out, in, k, k]
    Parameter bias_;    // [out]
};

class Dense final : public Layer {
public:
    Dense(int in_features, int out_features);

    std::string kind() const override { return "dense"; }
    Tensor forward(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

    Parameter& weight() noexcept { return weight_; }
    Parameter& bias() noexcept { return bias_; }

private:
    int in_, out_;
    Parameter weight_;  // [out, in]
    Parameter bias_;    // [out]
};

class Relu final : public Layer {
public:
    std::string kind() const override { return "relu"; }
    Tensor forward(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
};

// tanh(max(z, 0)): bounded to [0, 1) and exactly zero for non-positive input.
class RectifiedTanh final : public Layer {
public:
    std::string kind() const override { return "rectified_tanh"; }
    Tensor forward(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<RectifiedTanh>(*this); }
};

class Sigmoid final : public Layer {
public:
    std::string kind() const override { return "sigmoid"; }
    Tensor forward(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Sigmoid>(*this); }
};

// 2x2 window, stride 2. Odd trailing rows/columns are dropped.
class MaxPool2d final : public Layer {
public:
    std::string kind() const override { return "maxpool2d"; }
    Tensor forward(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(*this); }
};

// Nearest-neighbour 2x upsampling.
class Upsample2d final : public Layer {
public:
    std::string kind() const override { return "upsample2d"; }
    Tensor forward(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Upsample2d>(*this); }
};

class GlobalAvgPool final : public Layer {
public:
    std::string kind() const override { return "global_avg_pool"; }
    Tensor forward(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
};

// Per-channel maximum. Ties go to the first position in row-major order.
class GlobalMaxPool final : public Layer {
public:
    std::string kind() const override { return "global_max_pool"; }
    Tensor forward(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalMaxPool>(*this); }
};

// Two hand-crafted features per sample: mean and max over channel 0.
// Backs the linear stub classifier used for dry runs.
class SummaryFeatures final : public Layer {
public:
    std::string kind() const override { return "summary_features"; }
    Tensor forward(const Tensor& x) const override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<SummaryFeatures>(*this); }
};

class Sequential {
public:
    Sequential() = default;
    Sequential(const Sequential& other);
    Sequential& operator=(const Sequential& other);
    Sequential(Sequential&&) noexcept = default;
    Sequential& operator=(Sequential&&) noexcept = default;

    Sequential& add(std::unique_ptr<Layer> layer);

    std::size_t size() const noexcept { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_.at(i); }
    const Layer& layer(std::size_t i) const { return *layers_.at(i); }

    Tensor forward(const Tensor& x) const;
    // Caches activations for backward(). When tap >= 0 the output of layer
    // `tap` is copied into *tap_out.
    Tensor forward_train(const Tensor& x, int tap = -1, Tensor* tap_out = nullptr);
    // When tap >= 0 the gradient w.r.t. the output of layer `tap` is copied
    // into *tap_grad.
    Tensor backward(const Tensor& grad_out, int tap = -1, Tensor* tap_grad = nullptr);

    std::vector<Parameter*> parameters();
    void zero_grad();
    std::size_t parameter_count();

    // Glorot-uniform weights, zero biases.
    void initialize(std::uint64_t seed);

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

struct AdamOptions {
    double learning_rate = 1e-5;
    // Inverse-time learning-rate decay per iteration: lr / (1 + decay * t).
    double decay = 1e-8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
};

class Adam {
public:
    Adam(std::vector<Parameter*> params, AdamOptions opts);
    void step();
    std::int64_t iterations() const noexcept { return t_; }

private:
    std::vector<Parameter*> params_;
    AdamOptions opts_;
    std::vector<std::vector<float>> m_, v_;
    std::int64_t t_ = 0;
};

struct LossResult {
    double loss = 0.0;
    Tensor grad;  // d loss / d input, same shape as the prediction
};

// Mean binary cross-entropy on raw logits, shape [n, 1, 1, 1].
LossResult bce_with_logits(const Tensor& logits, std::span<const float> targets);
// Mean squared error over every element.
LossResult mse(const Tensor& prediction, const Tensor& target);

double sigmoid(double z) noexcept;

// Parameter persistence: one portable-array file per parameter tensor plus
// "index.json" listing names and shapes in order.
void save_parameters(Sequential& net, const std::filesystem::path& dir);
void load_parameters(Sequential& net, const std::filesystem::path& dir);

} // namespace demf::nn
