#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "noprop/tensor.hpp"

namespace noprop {

// In-memory dataset: images as channel-last floats in [0,1] plus class ids.
struct DatasetHandle {
    std::size_t n = 0;
    std::size_t height = 1;
    std::size_t width = 1;
    std::size_t channels = 1;
    std::size_t num_classes = 0;
    std::vector<float> images;  // n * height * width * channels
    std::vector<int> labels;    // n
    std::string split;

    std::size_t image_dim() const { return height * width * channels; }

    // [B, C, H, W] slice for convolutional pathways.
    Tensor batch_images_nchw(std::span<const std::size_t> idx) const;
    // [B, H*W*C] slice for fully-connected pathways.
    Tensor batch_images_flat(std::span<const std::size_t> idx) const;
    std::vector<int> batch_labels(std::span<const std::size_t> idx) const;

    void validate() const;
};

// Big-endian IDX pair (images magic 2051, labels magic 2049).
DatasetHandle load_idx(const std::string& images_path, const std::string& labels_path);

// Gaussian blobs (unit variance) centered on a circle sized so adjacent
// centers are `separation` apart. separation >= 6 gives linearly separable
// classes with overwhelming probability.
DatasetHandle synth_blobs(std::size_t n_per_class, std::size_t m, std::size_t d, double separation,
                          std::uint64_t seed);

// CIFAR-10 binary batches (3073-byte records). Optional loader behind the
// same handle contract.
DatasetHandle load_cifar10(const std::vector<std::string>& batch_paths);

}  // namespace noprop
