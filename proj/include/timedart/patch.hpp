#ifndef TIMEDART_PATCH_HPP
#define TIMEDART_PATCH_HPP

#include <cmath>
#include <cstddef>

#include "tensor.hpp"

namespace timedart {

/// Split a [C x L] window into non-overlapping patches [C x N x P] with
/// stride equal to the patch length, so N * P == L exactly.
inline Tensor patchify(const Tensor& window, std::size_t patch_len) {
    if (window.rank() != 2) throw Error("patchify: expected [C x L] input");
    if (patch_len == 0) throw Error("patchify: patch length must be >= 1");
    const std::size_t channels = window.dim(0);
    const std::size_t length = window.dim(1);
    if (length % patch_len != 0) {
        throw Error("patchify: length " + std::to_string(length) + " not divisible by patch length " +
                    std::to_string(patch_len));
    }
    const std::size_t num_patches = length / patch_len;
    Tensor patches({channels, num_patches, patch_len});
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t j = 0; j < num_patches; ++j) {
            for (std::size_t k = 0; k < patch_len; ++k) {
                patches.at(c, j, k) = window.at(c, j * patch_len + k);
            }
        }
    }
    return patches;
}

/// Exact inverse of patchify.
inline Tensor unpatchify(const Tensor& patches) {
    if (patches.rank() != 3) throw Error("unpatchify: expected [C x N x P] input");
    const std::size_t channels = patches.dim(0);
    const std::size_t num_patches = patches.dim(1);
    const std::size_t patch_len = patches.dim(2);
    Tensor window({channels, num_patches * patch_len});
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t j = 0; j < num_patches; ++j) {
            for (std::size_t k = 0; k < patch_len; ++k) {
                window.at(c, j * patch_len + k) = patches.at(c, j, k);
            }
        }
    }
    return window;
}

/// Sinusoidal positional table [N x D]:
///   table[pos][2i]   = sin(pos / 10000^(2i/D))
///   table[pos][2i+1] = cos(pos / 10000^(2i/D))
inline Tensor positional_table(std::size_t positions, std::size_t model_dim) {
    if (model_dim == 0 || model_dim % 2 != 0) {
        throw Error("positional_table: model dim must be positive and even, got " +
                    std::to_string(model_dim));
    }
    Tensor table({positions, model_dim});
    for (std::size_t pos = 0; pos < positions; ++pos) {
        for (std::size_t i = 0; i < model_dim / 2; ++i) {
            const double rate =
                std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(model_dim));
            const double angle = static_cast<double>(pos) / rate;
            table.at(pos, 2 * i) = std::sin(angle);
            table.at(pos, 2 * i + 1) = std::cos(angle);
        }
    }
    return table;
}

} // namespace timedart

#endif // TIMEDART_PATCH_HPP
