#include "maskshape/nn/layers.hpp"

#include "conv_direct.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace maskshape::nn {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

std::string child_name(const std::string& prefix, const std::string& leaf)
{
    return prefix.empty() ? leaf : prefix + "." + leaf;
}

template <typename T>
Tensor<T> kaiming_uniform(typename Tensor<T>::Shape shape, std::size_t fan_in, std::mt19937_64& rng)
{
    Tensor<T> t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<T>(dist(rng));
    }
    return t;
}

void require_rank(std::size_t actual, std::size_t expected, const char* op)
{
    if (actual != expected) {
        throw std::invalid_argument(std::string(op) + " expects a rank-" + std::to_string(expected) + " input, got rank " +
                                    std::to_string(actual));
    }
}

// Unfolds one (C, H, W) sample into a (C*kh*kw, Ho*Wo) row-major matrix.
template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, T* col)
{
    const std::size_t plane = ho * wo;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* xc = x + ch * h * w;
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                T* row = col + ((ch * kh + ki) * kw + kj) * plane;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
                    T* dst = row + oy * wo;
                    if (iy < 0 || iy >= static_cast<long>(h)) {
                        std::fill(dst, dst + wo, T(0));
                        continue;
                    }
                    const T* src = xc + static_cast<std::size_t>(iy) * w;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? T(0) : src[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, T* x)
{
    const std::size_t plane = ho * wo;
    for (std::size_t ch = 0; ch < c; ++ch) {
        T* xc = x + ch * h * w;
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                const T* row = col + ((ch * kh + ki) * kw + kj) * plane;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(h)) {
                        continue;
                    }
                    T* dst = xc + static_cast<std::size_t>(iy) * w;
                    const T* src = row + oy * wo;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
                        if (ix >= 0 && ix < static_cast<long>(w)) {
                            dst[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

// Splits the channel axis of `t` into [0, split) and [split, C).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, std::size_t split)
{
    auto shape_a = t.shape();
    auto shape_b = t.shape();
    const std::size_t c = t.dim(1);
    shape_a[1] = split;
    shape_b[1] = c - split;
    Tensor<T> a(shape_a), b(shape_b);
    const std::size_t inner = t.stride0() / c;
    for (std::size_t n = 0; n < t.dim(0); ++n) {
        const T* src = t.data() + n * t.stride0();
        std::copy(src, src + split * inner, a.data() + n * a.stride0());
        std::copy(src + split * inner, src + c * inner, b.data() + n * b.stride0());
    }
    return {std::move(a), std::move(b)};
}

} // namespace

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.rank() != b.rank() || a.rank() < 2 || a.dim(0) != b.dim(0) ||
        !std::equal(a.shape().begin() + 2, a.shape().end(), b.shape().begin() + 2)) {
        throw std::invalid_argument("cannot concatenate " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
    }
    auto shape = a.shape();
    shape[1] += b.dim(1);
    Tensor<T> out(shape);
    for (std::size_t n = 0; n < a.dim(0); ++n) {
        T* dst = out.data() + n * out.stride0();
        const T* sa = a.data() + n * a.stride0();
        const T* sb = b.data() + n * b.stride0();
        std::copy(sa, sa + a.stride0(), dst);
        std::copy(sb, sb + b.stride0(), dst + a.stride0());
    }
    return out;
}

// ---------------------------------------------------------------- Layer

template <typename T>
std::vector<Parameter<T>*> Layer<T>::parameters()
{
    std::vector<Parameter<T>*> out;
    collect_parameters(out);
    return out;
}

template <typename T>
std::vector<Buffer<T>> Layer<T>::buffers()
{
    std::vector<Buffer<T>> out;
    collect_buffers(out);
    return out;
}

template <typename T>
void Layer<T>::zero_grad()
{
    for (auto* p : parameters()) {
        p->grad.fill(T(0));
    }
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h, std::size_t kernel_w,
                  std::size_t stride, std::size_t padding, std::mt19937_64& rng, bool bias)
    : in_(in_channels), out_(out_channels), kh_(kernel_h), kw_(kernel_w), stride_(stride), pad_(padding),
      has_bias_(bias)
{
    if (in_ == 0 || out_ == 0 || kh_ == 0 || kw_ == 0 || stride_ == 0) {
        throw std::invalid_argument("conv2d dimensions must be positive");
    }
    weight_ = Parameter<T>("weight", kaiming_uniform<T>({out_, in_, kh_, kw_}, in_ * kh_ * kw_, rng));
    bias_ = Parameter<T>("bias", Tensor<T>({out_}));
}

template <typename T>
void Conv2d<T>::set_name(const std::string& name)
{
    this->name_ = name;
    weight_.name = child_name(name, "weight");
    bias_.name = child_name(name, "bias");
}

template <typename T>
std::size_t Conv2d<T>::output_size(std::size_t input) const
{
    const std::size_t padded = input + 2 * pad_;
    if (padded < kh_) {
        throw std::invalid_argument("conv2d input smaller than the kernel");
    }
    return (padded - kh_) / stride_ + 1;
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& input, Mode)
{
    require_rank(input.rank(), 4, "conv2d");
    if (input.dim(1) != in_) {
        throw std::invalid_argument("conv2d expects " + std::to_string(in_) + " channels, got " +
                                    std::to_string(input.dim(1)));
    }
    const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
    if (h + 2 * pad_ < kh_ || w + 2 * pad_ < kw_) {
        throw std::invalid_argument("conv2d input smaller than the kernel");
    }
    const std::size_t ho = (h + 2 * pad_ - kh_) / stride_ + 1;
    const std::size_t wo = (w + 2 * pad_ - kw_) / stride_ + 1;
    const std::size_t rows = in_ * kh_ * kw_;
    const std::size_t plane = ho * wo;

    input_ = input;
    Tensor<T> out({n, out_, ho, wo});
    if (direct()) {
        const std::size_t hp = h + 2 * pad_, wp = w + 2 * pad_;
        col_.resize(in_ * hp * wp);
        for (std::size_t s = 0; s < n; ++s) {
            detail::pad_planes(input.data() + s * input.stride0(), in_, h, w, pad_, pad_, hp, wp, col_.data());
            T* y = out.data() + s * out.stride0();
            detail::correlate(col_.data(), in_, hp, wp, weight_.value.data(), out_, kh_, kw_, y);
            if (has_bias_) {
                for (std::size_t o = 0; o < out_; ++o) {
                    std::for_each(y + o * plane, y + (o + 1) * plane, [b = bias_.value[o]](T& v) { v += b; });
                }
            }
        }
        return out;
    }
    col_.resize(rows * plane);
    CMapRM<T> wmat(weight_.value.data(), out_, rows);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(bias_.value.data(), out_);
    for (std::size_t s = 0; s < n; ++s) {
        im2col(input.data() + s * input.stride0(), in_, h, w, kh_, kw_, stride_, pad_, ho, wo, col_.data());
        CMapRM<T> col(col_.data(), rows, plane);
        MapRM<T> y(out.data() + s * out.stride0(), out_, plane);
        y.noalias() = wmat * col;
        if (has_bias_) {
            y.colwise() += bias;
        }
    }
    return out;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_output)
{
    const std::size_t n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
    const std::size_t ho = grad_output.dim(2), wo = grad_output.dim(3);
    const std::size_t rows = in_ * kh_ * kw_;
    const std::size_t plane = ho * wo;

    Tensor<T> grad_input;
    if (input_grad_) {
        grad_input = Tensor<T>(input_.shape());
    }
    if (direct()) {
        const std::size_t hp = h + 2 * pad_, wp = w + 2 * pad_;
        const std::size_t gt = kh_ - 1 - pad_, gl = kw_ - 1 - pad_;
        const std::size_t ghp = ho + 2 * gt, gwp = wo + 2 * gl;
        const auto flipped = detail::flipped_transpose(weight_.value.data(), out_, in_, kh_, kw_);
        AlignedVector<T> gpad(input_grad_ ? out_ * ghp * gwp : 0);
        col_.resize(in_ * hp * wp);
        for (std::size_t s = 0; s < n; ++s) {
            const T* dy = grad_output.data() + s * grad_output.stride0();
            detail::pad_planes(input_.data() + s * input_.stride0(), in_, h, w, pad_, pad_, hp, wp, col_.data());
            detail::correlate_weight_grad(col_.data(), in_, hp, wp, dy, out_, kh_, kw_, weight_.grad.data());
            if (has_bias_) {
                for (std::size_t o = 0; o < out_; ++o) {
                    bias_.grad[o] += std::accumulate(dy + o * plane, dy + (o + 1) * plane, T(0));
                }
            }
            if (input_grad_) {
                detail::pad_planes(dy, out_, ho, wo, gt, gl, ghp, gwp, gpad.data());
                detail::correlate(gpad.data(), out_, ghp, gwp, flipped.data(), in_, kh_, kw_,
                                  grad_input.data() + s * input_.stride0());
            }
        }
        return grad_input;
    }
    AlignedVector<T> dcol(input_grad_ ? rows * plane : 0);
    col_.resize(rows * plane);
    MapRM<T> dw(weight_.grad.data(), out_, rows);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bias_.grad.data(), out_);
    CMapRM<T> wmat(weight_.value.data(), out_, rows);
    for (std::size_t s = 0; s < n; ++s) {
        im2col(input_.data() + s * input_.stride0(), in_, h, w, kh_, kw_, stride_, pad_, ho, wo, col_.data());
        CMapRM<T> col(col_.data(), rows, plane);
        CMapRM<T> dy(grad_output.data() + s * grad_output.stride0(), out_, plane);
        dw.noalias() += dy * col.transpose();
        if (has_bias_) {
            db += dy.rowwise().sum();
        }
        if (input_grad_) {
            MapRM<T> dc(dcol.data(), rows, plane);
            dc.noalias() = wmat.transpose() * dy;
            col2im(dcol.data(), in_, h, w, kh_, kw_, stride_, pad_, ho, wo, grad_input.data() + s * input_.stride0());
        }
    }
    return grad_input;
}

template <typename T>
void Conv2d<T>::collect_parameters(std::vector<Parameter<T>*>& out)
{
    out.push_back(&weight_);
    if (has_bias_) {
        out.push_back(&bias_);
    }
}

// ---------------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels, T momentum, T epsilon)
    : channels_(channels), momentum_(momentum), epsilon_(epsilon), scale_("weight", Tensor<T>({channels}, T(1))),
      shift_("bias", Tensor<T>({channels})), running_mean_({channels}), running_var_({channels}, T(1))
{
    if (channels == 0) {
        throw std::invalid_argument("batch norm needs at least one channel");
    }
}

template <typename T>
void BatchNorm2d<T>::set_name(const std::string& name)
{
    this->name_ = name;
    scale_.name = child_name(name, "weight");
    shift_.name = child_name(name, "bias");
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& input, Mode mode)
{
    if (input.rank() != 4 && input.rank() != 2) {
        throw std::invalid_argument("batch norm expects a rank-2 or rank-4 input");
    }
    if (input.dim(1) != channels_) {
        throw std::invalid_argument("batch norm expects " + std::to_string(channels_) + " channels");
    }
    const std::size_t n = input.dim(0);
    const std::size_t inner = input.stride0() / channels_;
    const std::size_t m = n * inner;
    last_mode_ = mode;
    if (mode == Mode::Train && m < 2) {
        throw std::invalid_argument("batch norm in training mode needs more than one value per channel");
    }

    normalized_ = Tensor<T>(input.shape());
    Tensor<T> out(input.shape());
    inv_std_.assign(channels_, T(0));
    for (std::size_t c = 0; c < channels_; ++c) {
        double mean = 0.0, var = 0.0;
        if (mode == Mode::Train) {
            for (std::size_t s = 0; s < n; ++s) {
                const T* x = input.data() + s * input.stride0() + c * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    mean += x[i];
                }
            }
            mean /= static_cast<double>(m);
            // Corrected two-pass mean: a constant channel comes out exactly constant.
            double correction = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                const T* x = input.data() + s * input.stride0() + c * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    correction += x[i] - mean;
                }
            }
            mean += correction / static_cast<double>(m);
            for (std::size_t s = 0; s < n; ++s) {
                const T* x = input.data() + s * input.stride0() + c * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    const double d = x[i] - mean;
                    var += d * d;
                }
            }
            const double unbiased = var / static_cast<double>(m - 1);
            var /= static_cast<double>(m);
            running_mean_[c] = static_cast<T>((1.0 - momentum_) * running_mean_[c] + momentum_ * mean);
            running_var_[c] = static_cast<T>((1.0 - momentum_) * running_var_[c] + momentum_ * unbiased);
        } else {
            mean = running_mean_[c];
            var = running_var_[c];
        }
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(epsilon_));
        inv_std_[c] = static_cast<T>(inv);
        const T g = scale_.value[c], b = shift_.value[c];
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = s * input.stride0() + c * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                const T xh = static_cast<T>((input[off + i] - mean) * inv);
                normalized_[off + i] = xh;
                out[off + i] = g * xh + b;
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad_output)
{
    const std::size_t n = grad_output.dim(0);
    const std::size_t inner = grad_output.stride0() / channels_;
    const double m = static_cast<double>(n * inner);
    Tensor<T> grad_input(grad_output.shape());
    for (std::size_t c = 0; c < channels_; ++c) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = s * grad_output.stride0() + c * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                sum_dy += grad_output[off + i];
                sum_dy_xh += static_cast<double>(grad_output[off + i]) * normalized_[off + i];
            }
        }
        scale_.grad[c] += static_cast<T>(sum_dy_xh);
        shift_.grad[c] += static_cast<T>(sum_dy);
        const double g = scale_.value[c];
        const double inv = inv_std_[c];
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = s * grad_output.stride0() + c * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                if (last_mode_ == Mode::Train) {
                    const double v = m * grad_output[off + i] - sum_dy - normalized_[off + i] * sum_dy_xh;
                    grad_input[off + i] = static_cast<T>(g * inv * v / m);
                } else {
                    grad_input[off + i] = static_cast<T>(g * inv * grad_output[off + i]);
                }
            }
        }
    }
    return grad_input;
}

template <typename T>
void BatchNorm2d<T>::collect_parameters(std::vector<Parameter<T>*>& out)
{
    out.push_back(&scale_);
    out.push_back(&shift_);
}

template <typename T>
void BatchNorm2d<T>::collect_buffers(std::vector<Buffer<T>>& out)
{
    out.push_back({child_name(this->name_, "running_mean"), &running_mean_});
    out.push_back({child_name(this->name_, "running_var"), &running_var_});
}

// ---------------------------------------------------------------- ReLU

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& input, Mode)
{
    shape_ = input.shape();
    active_.resize(input.size());
    Tensor<T> out(input.shape());
    T closest = std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < input.size(); ++i) {
        closest = std::min(closest, static_cast<T>(std::abs(input[i])));
        const bool on = input[i] > T(0);
        active_[i] = on;
        out[i] = on ? input[i] : T(0);
    }
    margin_ = static_cast<double>(closest);
    return out;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_output)
{
    Tensor<T> grad(shape_);
    for (std::size_t i = 0; i < grad.size(); ++i) {
        grad[i] = active_[i] ? grad_output[i] : T(0);
    }
    return grad;
}

// ---------------------------------------------------------------- MaxPool2d

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& input, Mode)
{
    require_rank(input.rank(), 4, "max_pool");
    input_shape_ = input.shape();
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t ho = (h + 1) / 2, wo = (w + 1) / 2;
    Tensor<T> out({n, c, ho, wo});
    argmax_.resize(out.size());
    T closest = std::numeric_limits<T>::infinity();
    std::size_t o = 0;
    for (std::size_t p = 0; p < n * c; ++p) {
        const std::size_t base = p * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
                T best = -std::numeric_limits<T>::infinity();
                T runner_up = -std::numeric_limits<T>::infinity();
                std::size_t best_idx = base + (2 * oy) * w + 2 * ox;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t y = 2 * oy + dy, x = 2 * ox + dx;
                        if (y >= h || x >= w) {
                            continue;
                        }
                        const std::size_t idx = base + y * w + x;
                        if (input[idx] > best) {
                            runner_up = best;
                            best = input[idx];
                            best_idx = idx;
                        } else {
                            runner_up = std::max(runner_up, input[idx]);
                        }
                    }
                }
                out[o] = input[best_idx];
                argmax_[o] = best_idx;
                // Exact ties come from identical (typically all-zero post-ReLU) inputs that stay tied
                // under perturbation, so only strictly positive gaps count.
                if (best > runner_up) {
                    closest = std::min(closest, best - runner_up);
                }
            }
        }
    }
    margin_ = static_cast<double>(closest);
    return out;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& grad_output)
{
    Tensor<T> grad(input_shape_);
    for (std::size_t o = 0; o < grad_output.size(); ++o) {
        grad[argmax_[o]] += grad_output[o];
    }
    return grad;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features, std::mt19937_64& rng)
    : in_(in_features), out_(out_features)
{
    if (in_ == 0 || out_ == 0) {
        throw std::invalid_argument("linear dimensions must be positive");
    }
    weight_ = Parameter<T>("weight", kaiming_uniform<T>({out_, in_}, in_, rng));
    bias_ = Parameter<T>("bias", Tensor<T>({out_}));
}

template <typename T>
void Linear<T>::set_name(const std::string& name)
{
    this->name_ = name;
    weight_.name = child_name(name, "weight");
    bias_.name = child_name(name, "bias");
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& input, Mode)
{
    require_rank(input.rank(), 2, "linear");
    if (input.dim(1) != in_) {
        throw std::invalid_argument("linear expects " + std::to_string(in_) + " features, got " +
                                    std::to_string(input.dim(1)));
    }
    input_ = input;
    const std::size_t n = input.dim(0);
    Tensor<T> out({n, out_});
    CMapRM<T> x(input.data(), n, in_);
    CMapRM<T> wmat(weight_.value.data(), out_, in_);
    MapRM<T> y(out.data(), n, out_);
    y.noalias() = x * wmat.transpose();
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.value.data(), out_);
    return out;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_output)
{
    const std::size_t n = input_.dim(0);
    CMapRM<T> x(input_.data(), n, in_);
    CMapRM<T> dy(grad_output.data(), n, out_);
    MapRM<T> dw(weight_.grad.data(), out_, in_);
    dw.noalias() += dy.transpose() * x;
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.grad.data(), out_) += dy.colwise().sum();
    Tensor<T> grad({n, in_});
    MapRM<T> dx(grad.data(), n, in_);
    dx.noalias() = dy * CMapRM<T>(weight_.value.data(), out_, in_);
    return grad;
}

template <typename T>
void Linear<T>::collect_parameters(std::vector<Parameter<T>*>& out)
{
    out.push_back(&weight_);
    out.push_back(&bias_);
}

// ---------------------------------------------------------------- Flatten

template <typename T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& input, Mode)
{
    if (input.rank() < 2) {
        throw std::invalid_argument("flatten expects a batched input");
    }
    input_shape_ = input.shape();
    Tensor<T> out = input;
    out.reshape({input.dim(0), input.stride0()});
    return out;
}

template <typename T>
Tensor<T> Flatten<T>::backward(const Tensor<T>& grad_output)
{
    Tensor<T> grad = grad_output;
    grad.reshape(input_shape_);
    return grad;
}

// ---------------------------------------------------------------- Sequential

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& input, Mode mode)
{
    Tensor<T> x = input;
    for (auto& layer : layers_) {
        x = layer->forward(x, mode);
        require_finite(x, layer->kind() + (layer->name().empty() ? "" : " " + layer->name()));
    }
    return x;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_output)
{
    Tensor<T> g = grad_output;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
        g = (*it)->backward(g);
    }
    return g;
}

template <typename T>
void Sequential<T>::collect_parameters(std::vector<Parameter<T>*>& out)
{
    for (auto& layer : layers_) {
        layer->collect_parameters(out);
    }
}

template <typename T>
void Sequential<T>::collect_buffers(std::vector<Buffer<T>>& out)
{
    for (auto& layer : layers_) {
        layer->collect_buffers(out);
    }
}

template <typename T>
double Sequential<T>::nonsmooth_margin() const
{
    double m = std::numeric_limits<double>::infinity();
    for (const auto& layer : layers_) {
        m = std::min(m, layer->nonsmooth_margin());
    }
    return m;
}

template <typename T>
void Sequential<T>::set_name(const std::string& name)
{
    this->name_ = name;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i]->set_name(child_name(name, std::to_string(i)));
    }
}

// ---------------------------------------------------------------- DenseBlock

template <typename T>
DenseBlock<T>::DenseBlock(std::size_t in_channels, std::size_t layers, std::size_t growth, std::mt19937_64& rng,
                          std::size_t kernel, std::size_t padding)
    : in_(in_channels), growth_(growth)
{
    if (layers == 0 || growth == 0) {
        throw std::invalid_argument("dense block needs at least one layer and positive growth");
    }
    std::size_t c = in_channels;
    for (std::size_t l = 0; l < layers; ++l) {
        auto seq = std::make_unique<Sequential<T>>();
        seq->template add<BatchNorm2d<T>>(c);
        seq->template add<ReLU<T>>();
        seq->template add<Conv2d<T>>(c, growth, kernel, kernel, 1, padding, rng, false);
        layers_.push_back(std::move(seq));
        c += growth;
    }
}

template <typename T>
Tensor<T> DenseBlock<T>::forward(const Tensor<T>& input, Mode mode)
{
    Tensor<T> features = input;
    for (auto& layer : layers_) {
        Tensor<T> out = layer->forward(features, mode);
        if (out.dim(2) != features.dim(2) || out.dim(3) != features.dim(3)) {
            throw std::invalid_argument("dense block convolution must preserve spatial size");
        }
        features = concat_channels(features, out);
    }
    return features;
}

template <typename T>
Tensor<T> DenseBlock<T>::backward(const Tensor<T>& grad_output)
{
    Tensor<T> g = grad_output;
    for (std::size_t l = layers_.size(); l-- > 0;) {
        const std::size_t c_in = in_ + l * growth_;
        auto [head, tail] = split_channels(g, c_in);
        Tensor<T> dx = layers_[l]->backward(tail);
        for (std::size_t i = 0; i < head.size(); ++i) {
            head[i] += dx[i];
        }
        g = std::move(head);
    }
    return g;
}

template <typename T>
void DenseBlock<T>::collect_parameters(std::vector<Parameter<T>*>& out)
{
    for (auto& layer : layers_) {
        layer->collect_parameters(out);
    }
}

template <typename T>
void DenseBlock<T>::collect_buffers(std::vector<Buffer<T>>& out)
{
    for (auto& layer : layers_) {
        layer->collect_buffers(out);
    }
}

template <typename T>
double DenseBlock<T>::nonsmooth_margin() const
{
    double m = std::numeric_limits<double>::infinity();
    for (const auto& layer : layers_) {
        m = std::min(m, layer->nonsmooth_margin());
    }
    return m;
}

template <typename T>
void DenseBlock<T>::set_name(const std::string& name)
{
    this->name_ = name;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i]->set_name(child_name(name, std::to_string(i)));
    }
}

// ---------------------------------------------------------------- Transition

template <typename T>
Transition<T>::Transition(std::size_t in_channels, std::size_t out_channels, std::mt19937_64& rng)
{
    this->template add<BatchNorm2d<T>>(in_channels);
    this->template add<ReLU<T>>();
    this->template add<Conv2d<T>>(in_channels, out_channels, 1, 1, 1, 0, rng, false);
    this->template add<MaxPool2d<T>>();
}

template Tensor<float> concat_channels(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> concat_channels(const Tensor<double>&, const Tensor<double>&);

template class Layer<float>;
template class Layer<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ReLU<float>;
template class ReLU<double>;
template class MaxPool2d<float>;
template class MaxPool2d<double>;
template class Linear<float>;
template class Linear<double>;
template class Flatten<float>;
template class Flatten<double>;
template class Sequential<float>;
template class Sequential<double>;
template class DenseBlock<float>;
template class DenseBlock<double>;
template class Transition<float>;
template class Transition<double>;

} // namespace maskshape::nn
