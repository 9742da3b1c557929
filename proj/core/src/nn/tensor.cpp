#include "maskshape/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>

namespace maskshape::nn {

namespace {

constexpr std::size_t kAlignment = 64;
constexpr std::size_t kPooledMin = std::size_t{1} << 20;
constexpr std::size_t kPoolCap = std::size_t{1} << 30;

struct BlockPool
{
    std::mutex mutex;
    std::multimap<std::size_t, void*> free;
    std::size_t cached = 0;

    ~BlockPool()
    {
        for (auto& [bytes, p] : free) {
            ::operator delete(p, std::align_val_t(kAlignment));
        }
    }
};

BlockPool& pool()
{
    static BlockPool instance;
    return instance;
}

} // namespace

void* allocate_block(std::size_t bytes)
{
    if (bytes >= kPooledMin) {
        auto& p = pool();
        std::lock_guard lock(p.mutex);
        if (auto it = p.free.find(bytes); it != p.free.end()) {
            void* block = it->second;
            p.free.erase(it);
            p.cached -= bytes;
            return block;
        }
    }
    return ::operator new(bytes, std::align_val_t(kAlignment));
}

void release_block(void* block, std::size_t bytes) noexcept
{
    if (block == nullptr) {
        return;
    }
    if (bytes >= kPooledMin) {
        auto& p = pool();
        std::lock_guard lock(p.mutex);
        if (p.cached + bytes <= kPoolCap) {
            p.free.emplace(bytes, block);
            p.cached += bytes;
            return;
        }
    }
    ::operator delete(block, std::align_val_t(kAlignment));
}

std::size_t shape_size(const std::vector<std::size_t>& shape)
{
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_string(const std::vector<std::size_t>& shape)
{
    std::ostringstream ss;
    ss << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        ss << (i ? ", " : "") << shape[i];
    }
    ss << ')';
    return ss.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill)
{
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end())
{
    if (data_.size() != shape_size(shape_)) {
        throw std::invalid_argument("tensor value count " + std::to_string(data_.size()) + " does not match shape " +
                                    shape_string(shape_));
    }
}

template <typename T>
void Tensor<T>::fill(T value)
{
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
void Tensor<T>::reshape(Shape shape)
{
    if (shape_size(shape) != data_.size()) {
        throw std::invalid_argument("reshape to " + shape_string(shape) + " changes the element count");
    }
    shape_ = std::move(shape);
}

template <typename T>
bool Tensor<T>::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void require_finite(const Tensor<T>& t, std::string_view op)
{
    if (!t.all_finite()) {
        throw NonFiniteError("non-finite value produced by " + std::string(op));
    }
}

template class Tensor<float>;
template class Tensor<double>;
template void require_finite(const Tensor<float>&, std::string_view);
template void require_finite(const Tensor<double>&, std::string_view);

} // namespace maskshape::nn
