#pragma once
// Base64 payloads of little-endian float32 arrays, the on-disk form of every
// feature vector, feature matrix and parameter tensor.

#include "mmkg/errors.hpp"

#include <boost/beast/core/detail/base64.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmkg::codec {

namespace detail {

inline std::uint32_t to_little_endian(std::uint32_t v)
{
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
    }
}

} // namespace detail

inline std::string encode_bytes(std::span<const std::uint8_t> bytes)
{
    namespace b64 = boost::beast::detail::base64;
    std::string out(b64::encoded_size(bytes.size()), '\0');
    out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
    return out;
}

inline std::vector<std::uint8_t> decode_bytes(std::string_view text)
{
    namespace b64 = boost::beast::detail::base64;
    if (text.size() % 4 != 0) {
        throw SchemaError("base64 payload length " + std::to_string(text.size()) +
                          " is not a multiple of 4");
    }
    std::vector<std::uint8_t> out(b64::decoded_size(text.size()));
    // Beast stops at the first '='; at most two may follow as padding.
    const std::size_t pad = text.size() - std::min(text.size(), text.find_last_not_of('=') + 1);
    if (pad > 2) {
        throw SchemaError("base64 payload has " + std::to_string(pad) + " padding characters");
    }
    auto [written, read] = b64::decode(out.data(), text.data(), text.size() - pad);
    if (read != text.size() - pad) {
        throw SchemaError("invalid base64 character at offset " + std::to_string(read));
    }
    out.resize(written);
    return out;
}

inline std::string encode_floats(std::span<const float> values)
{
    std::vector<std::uint8_t> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t word = detail::to_little_endian(std::bit_cast<std::uint32_t>(values[i]));
        std::memcpy(bytes.data() + 4 * i, &word, 4);
    }
    return encode_bytes(bytes);
}

inline std::vector<float> decode_floats(std::string_view text)
{
    auto bytes = decode_bytes(text);
    if (bytes.size() % 4 != 0) {
        throw SchemaError("float payload of " + std::to_string(bytes.size()) +
                          " bytes is not a multiple of 4");
    }
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t word;
        std::memcpy(&word, bytes.data() + 4 * i, 4);
        out[i] = std::bit_cast<float>(detail::to_little_endian(word));
    }
    return out;
}

} // namespace mmkg::codec
