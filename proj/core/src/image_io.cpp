#include "maskshape/image_io.hpp"

#include "maskshape/sfmt.hpp"

#include <png.h>

#include <array>
#include <cstring>
#include <stdexcept>

namespace maskshape {

std::vector<std::uint8_t> encode_mask_png(const BinaryMask& mask)
{
    std::vector<std::uint8_t> gray(mask.bits.size());
    for (std::size_t i = 0; i < gray.size(); ++i) {
        gray[i] = mask.bits[i] ? 255 : 0;
    }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(mask.resolution);
    image.height = static_cast<png_uint_32>(mask.resolution);
    image.format = PNG_FORMAT_GRAY;

    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, gray.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("PNG encode failed: ") + image.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, gray.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("PNG encode failed: ") + image.message);
    }
    out.resize(size);
    return out;
}

BinaryMask decode_mask_png(std::span<const std::uint8_t> bytes, View view)
{
    if (bytes.empty()) {
        throw std::runtime_error("undecodable mask");
    }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw std::runtime_error("undecodable mask");
    }
    image.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> gray(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, gray.data(), 0, nullptr)) {
        png_image_free(&image);
        throw std::runtime_error("undecodable mask");
    }
    if (image.width != image.height || image.width < static_cast<png_uint_32>(kMinResolution)) {
        throw std::runtime_error("undecodable mask");
    }
    BinaryMask mask(static_cast<int>(image.width), view);
    for (std::size_t i = 0; i < mask.bits.size(); ++i) {
        mask.bits[i] = gray[i] >= 128 ? 1 : 0;
    }
    return mask;
}

void save_mask_png(const BinaryMask& mask, const std::filesystem::path& path)
{
    write_file_bytes(path, encode_mask_png(mask));
}

BinaryMask load_mask_png(const std::filesystem::path& path, View view)
{
    const auto bytes = read_file_bytes(path);
    return decode_mask_png(bytes, view);
}

namespace {
constexpr std::string_view kAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes)
{
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    if (i < bytes.size()) {
        std::uint32_t v = bytes[i] << 16;
        if (i + 1 < bytes.size()) {
            v |= bytes[i + 1] << 8;
        }
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text)
{
    std::array<int, 256> lookup;
    lookup.fill(-1);
    for (std::size_t i = 0; i < kAlphabet.size(); ++i) {
        lookup[static_cast<unsigned char>(kAlphabet[i])] = static_cast<int>(i);
    }
    std::vector<std::uint8_t> out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (char ch : text) {
        if (ch == '=' || ch == '\n' || ch == '\r' || ch == ' ') {
            continue;
        }
        const int v = lookup[static_cast<unsigned char>(ch)];
        if (v < 0) {
            throw std::invalid_argument("invalid base64 character");
        }
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

} // namespace maskshape
