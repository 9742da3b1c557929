#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace maskshape::nn {

/// Raised when an op produces NaN or Inf.
class NonFiniteError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/**
 * 64-byte aligned blocks. Large blocks are recycled by exact size instead of
 * going back to the OS, because activation buffers of tens of megabytes are
 * otherwise mapped and page-faulted afresh on every forward pass.
 */
void* allocate_block(std::size_t bytes);
void release_block(void* p, std::size_t bytes) noexcept;

/**
 * Cache-line aligned storage. Eigen's small-product kernels peel differently
 * depending on pointer alignment, so fixed alignment is what makes repeated
 * forwards bit-identical.
 */
template <typename T>
struct AlignedAllocator
{
    using value_type = T;
    static constexpr std::size_t kAlignment = 64;

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept
    {
    }

    T* allocate(std::size_t n) { return static_cast<T*>(allocate_block(n * sizeof(T))); }
    void deallocate(T* p, std::size_t n) noexcept { release_block(p, n * sizeof(T)); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept
    {
        return true;
    }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor: (batch, channels, height, width) or (batch, features).
template <typename T>
class Tensor
{
public:
    using Shape = std::vector<std::size_t>;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// Elements per leading (batch) index.
    std::size_t stride0() const { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }

    void fill(T value);
    void reshape(Shape shape);
    bool all_finite() const;

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    AlignedVector<T> data_;
};

std::size_t shape_size(const std::vector<std::size_t>& shape);
std::string shape_string(const std::vector<std::size_t>& shape);

/// Throws NonFiniteError naming `op` if `t` holds NaN or Inf.
template <typename T>
void require_finite(const Tensor<T>& t, std::string_view op);

/// Tensor<To> with converted values.
template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t)
{
    std::vector<To> values(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        values[i] = static_cast<To>(t[i]);
    }
    return Tensor<To>(t.shape(), std::move(values));
}

extern template class Tensor<float>;
extern template class Tensor<double>;

} // namespace maskshape::nn
