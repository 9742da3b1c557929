#pragma once

// Stride-1 correlation on zero-padded planes. Output rows are produced in
// strips whose accumulators stay in vector registers; for the narrow
// convolutions of dense blocks this beats im2col + GEMM several times over.

#include <algorithm>
#include <cstddef>
#include <vector>

namespace maskshape::nn::detail {

inline constexpr std::size_t kStrip = 64;

/// Copies (c, h, w) planes into zeroed (c, h + top + bottom, w + left + right) planes.
template <typename T>
void pad_planes(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t top, std::size_t left,
                std::size_t hp, std::size_t wp, T* out)
{
    std::fill(out, out + c * hp * wp, T(0));
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t r = 0; r < h; ++r) {
            std::copy_n(x + (ch * h + r) * w, w, out + (ch * hp + r + top) * wp + left);
        }
    }
}

template <typename T, std::size_t OB, std::size_t S>
void correlate_strip(const T* xp, std::size_t cin, std::size_t hp, std::size_t wp, const T* w, std::size_t kh,
                     std::size_t kw, std::size_t o0, std::size_t r, std::size_t j0, std::size_t len, std::size_t ho,
                     std::size_t wo, T* y)
{
    const std::size_t n = S != 0 ? S : len;
    T acc[OB][kStrip] = {};
    for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
            const T* xr = xp + (c * hp + r + ky) * wp + j0;
            for (std::size_t kx = 0; kx < kw; ++kx) {
                const T* xs = xr + kx;
                for (std::size_t b = 0; b < OB; ++b) {
                    const T wv = w[(((o0 + b) * cin + c) * kh + ky) * kw + kx];
                    for (std::size_t j = 0; j < n; ++j) {
                        acc[b][j] += wv * xs[j];
                    }
                }
            }
        }
    }
    for (std::size_t b = 0; b < OB; ++b) {
        std::copy_n(acc[b], n, y + ((o0 + b) * ho + r) * wo + j0);
    }
}

template <typename T, std::size_t OB>
void correlate_block(const T* xp, std::size_t cin, std::size_t hp, std::size_t wp, const T* w, std::size_t kh,
                     std::size_t kw, std::size_t o0, std::size_t ho, std::size_t wo, T* y)
{
    for (std::size_t r = 0; r < ho; ++r) {
        for (std::size_t j0 = 0; j0 < wo; j0 += kStrip) {
            const std::size_t len = std::min(kStrip, wo - j0);
            switch (len) {
            case 64: correlate_strip<T, OB, 64>(xp, cin, hp, wp, w, kh, kw, o0, r, j0, len, ho, wo, y); break;
            case 32: correlate_strip<T, OB, 32>(xp, cin, hp, wp, w, kh, kw, o0, r, j0, len, ho, wo, y); break;
            case 16: correlate_strip<T, OB, 16>(xp, cin, hp, wp, w, kh, kw, o0, r, j0, len, ho, wo, y); break;
            case 8: correlate_strip<T, OB, 8>(xp, cin, hp, wp, w, kh, kw, o0, r, j0, len, ho, wo, y); break;
            default: correlate_strip<T, OB, 0>(xp, cin, hp, wp, w, kh, kw, o0, r, j0, len, ho, wo, y); break;
            }
        }
    }
}

/// y(o, r, j) = sum over c, ky, kx of w(o, c, ky, kx) xp(c, r + ky, j + kx); y is overwritten.
template <typename T>
void correlate(const T* xp, std::size_t cin, std::size_t hp, std::size_t wp, const T* w, std::size_t cout,
               std::size_t kh, std::size_t kw, T* y)
{
    const std::size_t ho = hp - kh + 1, wo = wp - kw + 1;
    std::size_t o = 0;
    for (; o + 4 <= cout; o += 4) {
        correlate_block<T, 4>(xp, cin, hp, wp, w, kh, kw, o, ho, wo, y);
    }
    for (; o + 2 <= cout; o += 2) {
        correlate_block<T, 2>(xp, cin, hp, wp, w, kh, kw, o, ho, wo, y);
    }
    for (; o < cout; ++o) {
        correlate_block<T, 1>(xp, cin, hp, wp, w, kh, kw, o, ho, wo, y);
    }
}

/// dw(o, c, ky, kx) += sum over r, j of dy(o, r, j) xp(c, r + ky, j + kx).
template <typename T>
void correlate_weight_grad(const T* xp, std::size_t cin, std::size_t hp, std::size_t wp, const T* dy, std::size_t cout,
                           std::size_t kh, std::size_t kw, T* dw)
{
    const std::size_t ho = hp - kh + 1, wo = wp - kw + 1;
    std::vector<T> acc(kw * kStrip);
    for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
                std::fill(acc.begin(), acc.end(), T(0));
                for (std::size_t r = 0; r < ho; ++r) {
                    const T* g = dy + (o * ho + r) * wo;
                    const T* xr = xp + (c * hp + r + ky) * wp;
                    for (std::size_t j0 = 0; j0 < wo; j0 += kStrip) {
                        const std::size_t len = std::min(kStrip, wo - j0);
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            T* a = acc.data() + kx * kStrip;
                            const T* xs = xr + j0 + kx;
                            for (std::size_t j = 0; j < len; ++j) {
                                a[j] += g[j0 + j] * xs[j];
                            }
                        }
                    }
                }
                T* out = dw + ((o * cin + c) * kh + ky) * kw;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    T sum = T(0);
                    for (std::size_t j = 0; j < kStrip; ++j) {
                        sum += acc[kx * kStrip + j];
                    }
                    out[kx] += sum;
                }
            }
        }
    }
}

/// w'(c, o, ky, kx) = w(o, c, kh-1-ky, kw-1-kx): the input gradient is a correlation of dy with w'.
template <typename T>
std::vector<T> flipped_transpose(const T* w, std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw)
{
    std::vector<T> out(cout * cin * kh * kw);
    for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    out[((c * cout + o) * kh + (kh - 1 - ky)) * kw + (kw - 1 - kx)] =
                        w[((o * cin + c) * kh + ky) * kw + kx];
                }
            }
        }
    }
    return out;
}

} // namespace maskshape::nn::detail
