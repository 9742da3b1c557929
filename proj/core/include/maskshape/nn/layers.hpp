#pragma once

#include "maskshape/nn/tensor.hpp"

#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace maskshape::nn {

enum class Mode { Train, Eval };

/// A trainable tensor with its gradient and Adam moments.
template <typename T>
struct Parameter
{
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> m;
    Tensor<T> v;
    long step = 0;

    Parameter() = default;
    Parameter(std::string name_, Tensor<T> value_)
        : name(std::move(name_)), value(std::move(value_)), grad(value.shape()), m(value.shape()), v(value.shape())
    {
    }
};

/// Non-trainable state that still belongs in a checkpoint (batch-norm running stats).
template <typename T>
struct Buffer
{
    std::string name;
    Tensor<T>* tensor;
};

/**
 * Base class for differentiable ops.
 *
 * forward() caches what backward() needs; backward() takes dLoss/dOutput,
 * accumulates parameter gradients and returns dLoss/dInput. Layers are
 * stateful between a forward and its backward, so one instance must not be
 * shared across concurrent passes.
 */
template <typename T>
class Layer
{
public:
    virtual ~Layer() = default;

    virtual Tensor<T> forward(const Tensor<T>& input, Mode mode) = 0;
    virtual Tensor<T> backward(const Tensor<T>& grad_output) = 0;

    virtual void collect_parameters(std::vector<Parameter<T>*>&) {}
    virtual void collect_buffers(std::vector<Buffer<T>>&) {}
    virtual std::string kind() const = 0;

    /**
     * Smallest distance of the last forward from a non-differentiable point:
     * |x| at ReLU inputs, max minus a strictly smaller runner-up in pooling
     * windows. Infinity for smooth layers. Finite-difference checks need this to exceed epsilon.
     */
    virtual double nonsmooth_margin() const { return std::numeric_limits<double>::infinity(); }

    /// Prefixes parameter and buffer names; composites forward it to children.
    virtual void set_name(const std::string& name) { name_ = name; }
    const std::string& name() const { return name_; }

    std::vector<Parameter<T>*> parameters();
    std::vector<Buffer<T>> buffers();
    void zero_grad();

protected:
    std::string name_;
};

/**
 * Cross-correlation with zero padding; weights are (out, in, kh, kw).
 *
 * A conv feeding a batch norm gets no bias: the normalization cancels it, so
 * its gradient is identically zero.
 */
template <typename T>
class Conv2d : public Layer<T>
{
public:
    Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h, std::size_t kernel_w,
           std::size_t stride, std::size_t padding, std::mt19937_64& rng, bool bias = true);

    Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
    Tensor<T> backward(const Tensor<T>& grad_output) override;
    void collect_parameters(std::vector<Parameter<T>*>& out) override;
    std::string kind() const override { return "conv2d"; }
    void set_name(const std::string& name) override;

    /// The first layer of a network never needs dLoss/dInput.
    void set_input_grad(bool enabled) { input_grad_ = enabled; }

    std::size_t in_channels() const { return in_; }
    std::size_t out_channels() const { return out_; }
    std::size_t output_size(std::size_t input) const;
    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }
    bool has_bias() const { return has_bias_; }

private:
    // Stride-1 convolutions whose padding is below the kernel size use direct correlation.
    bool direct() const { return stride_ == 1 && pad_ < kh_ && pad_ < kw_; }

    std::size_t in_, out_, kh_, kw_, stride_, pad_;
    bool has_bias_;
    bool input_grad_ = true;
    Parameter<T> weight_;
    Parameter<T> bias_;
    Tensor<T> input_;
    AlignedVector<T> col_;
};

/// Per-channel normalization over (batch, height, width).
template <typename T>
class BatchNorm2d : public Layer<T>
{
public:
    explicit BatchNorm2d(std::size_t channels, T momentum = T(0.1), T epsilon = T(1e-5));

    Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
    Tensor<T> backward(const Tensor<T>& grad_output) override;
    void collect_parameters(std::vector<Parameter<T>*>& out) override;
    void collect_buffers(std::vector<Buffer<T>>& out) override;
    std::string kind() const override { return "batch_norm"; }
    void set_name(const std::string& name) override;

    Parameter<T>& scale() { return scale_; }
    Parameter<T>& shift() { return shift_; }
    Tensor<T>& running_mean() { return running_mean_; }
    Tensor<T>& running_var() { return running_var_; }

private:
    std::size_t channels_;
    T momentum_;
    T epsilon_;
    Parameter<T> scale_;
    Parameter<T> shift_;
    Tensor<T> running_mean_;
    Tensor<T> running_var_;
    Tensor<T> normalized_;
    std::vector<T> inv_std_;
    Mode last_mode_ = Mode::Train;
};

template <typename T>
class ReLU : public Layer<T>
{
public:
    Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
    Tensor<T> backward(const Tensor<T>& grad_output) override;
    std::string kind() const override { return "relu"; }
    double nonsmooth_margin() const override { return margin_; }

private:
    std::vector<std::uint8_t> active_;
    double margin_ = std::numeric_limits<double>::infinity();
    typename Tensor<T>::Shape shape_;
};

/// 2x2 window, stride 2; odd sizes are padded on the right/bottom with -inf.
template <typename T>
class MaxPool2d : public Layer<T>
{
public:
    Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
    Tensor<T> backward(const Tensor<T>& grad_output) override;
    std::string kind() const override { return "max_pool"; }
    double nonsmooth_margin() const override { return margin_; }

private:
    std::vector<std::size_t> argmax_;
    double margin_ = std::numeric_limits<double>::infinity();
    typename Tensor<T>::Shape input_shape_;
};

/// y = W x + b with W stored (out, in).
template <typename T>
class Linear : public Layer<T>
{
public:
    Linear(std::size_t in_features, std::size_t out_features, std::mt19937_64& rng);

    Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
    Tensor<T> backward(const Tensor<T>& grad_output) override;
    void collect_parameters(std::vector<Parameter<T>*>& out) override;
    std::string kind() const override { return "linear"; }
    void set_name(const std::string& name) override;

    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }
    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }

private:
    std::size_t in_, out_;
    Parameter<T> weight_;
    Parameter<T> bias_;
    Tensor<T> input_;
};

template <typename T>
class Flatten : public Layer<T>
{
public:
    Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
    Tensor<T> backward(const Tensor<T>& grad_output) override;
    std::string kind() const override { return "flatten"; }

private:
    typename Tensor<T>::Shape input_shape_;
};

/// Runs children in order; every intermediate is checked for NaN/Inf.
template <typename T>
class Sequential : public Layer<T>
{
public:
    Sequential() = default;

    template <typename L, typename... Args>
    L& add(Args&&... args)
    {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        layers_.push_back(std::move(layer));
        return ref;
    }
    void add_layer(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

    Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
    Tensor<T> backward(const Tensor<T>& grad_output) override;
    void collect_parameters(std::vector<Parameter<T>*>& out) override;
    void collect_buffers(std::vector<Buffer<T>>& out) override;
    std::string kind() const override { return "sequential"; }
    double nonsmooth_margin() const override;
    void set_name(const std::string& name) override;

    std::size_t size() const { return layers_.size(); }
    Layer<T>& at(std::size_t i) { return *layers_.at(i); }

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/**
 * DenseNet block: layer l maps the concatenation of the input and all
 * previous outputs through BN -> ReLU -> conv(kernel, stride 1, padding) to
 * `growth` channels. Output channels = input + layers * growth.
 */
template <typename T>
class DenseBlock : public Layer<T>
{
public:
    DenseBlock(std::size_t in_channels, std::size_t layers, std::size_t growth, std::mt19937_64& rng,
               std::size_t kernel = 5, std::size_t padding = 2);

    Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
    Tensor<T> backward(const Tensor<T>& grad_output) override;
    void collect_parameters(std::vector<Parameter<T>*>& out) override;
    void collect_buffers(std::vector<Buffer<T>>& out) override;
    std::string kind() const override { return "dense_block"; }
    double nonsmooth_margin() const override;
    void set_name(const std::string& name) override;

    std::size_t out_channels() const { return in_ + layers_.size() * growth_; }

private:
    std::size_t in_;
    std::size_t growth_;
    std::vector<std::unique_ptr<Sequential<T>>> layers_;
};

/// BN -> ReLU -> 1x1 conv -> 2x2 max-pool.
template <typename T>
class Transition : public Sequential<T>
{
public:
    Transition(std::size_t in_channels, std::size_t out_channels, std::mt19937_64& rng);
    std::string kind() const override { return "transition"; }
};

/// Concatenates along the channel axis (dim 1) of equally shaped 4-D or 2-D tensors.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

extern template class Layer<float>;
extern template class Layer<double>;
extern template class Conv2d<float>;
extern template class Conv2d<double>;
extern template class BatchNorm2d<float>;
extern template class BatchNorm2d<double>;
extern template class ReLU<float>;
extern template class ReLU<double>;
extern template class MaxPool2d<float>;
extern template class MaxPool2d<double>;
extern template class Linear<float>;
extern template class Linear<double>;
extern template class Flatten<float>;
extern template class Flatten<double>;
extern template class Sequential<float>;
extern template class Sequential<double>;
extern template class DenseBlock<float>;
extern template class DenseBlock<double>;
extern template class Transition<float>;
extern template class Transition<double>;

} // namespace maskshape::nn
