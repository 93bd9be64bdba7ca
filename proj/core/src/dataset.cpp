#include "noprop/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "noprop/errors.hpp"
#include "noprop/rng.hpp"

namespace noprop {

namespace {

std::uint32_t read_u32_be(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw IOError("truncated read in " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

}  // namespace

void DatasetHandle::validate() const {
    if (n == 0) throw DataError("dataset is empty");
    if (images.size() != n * image_dim()) throw DataError("dataset image buffer size mismatch");
    if (labels.size() != n) throw DataError("dataset label count mismatch");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw DataError("label " + std::to_string(y) + " out of range [0," +
                            std::to_string(num_classes) + ")");
}

Tensor DatasetHandle::batch_images_nchw(std::span<const std::size_t> idx) const {
    Tensor out(Shape{idx.size(), channels, height, width});
    const std::size_t hw = height * width;
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const float* img = images.data() + idx[b] * image_dim();
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t c = 0; c < channels; ++c)
                out[b * channels * hw + c * hw + p] = static_cast<real>(img[p * channels + c]);
    }
    return out;
}

Tensor DatasetHandle::batch_images_flat(std::span<const std::size_t> idx) const {
    const std::size_t dim = image_dim();
    Tensor out(Shape{idx.size(), dim});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const float* img = images.data() + idx[b] * dim;
        for (std::size_t k = 0; k < dim; ++k) out[b * dim + k] = static_cast<real>(img[k]);
    }
    return out;
}

std::vector<int> DatasetHandle::batch_labels(std::span<const std::size_t> idx) const {
    std::vector<int> out(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) out[b] = labels[idx[b]];
    return out;
}

DatasetHandle load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw IOError("cannot open " + images_path);
    const std::uint32_t magic_i = read_u32_be(fi, images_path);
    if (magic_i != 2051)
        throw FormatError("bad images magic " + std::to_string(magic_i) + " in " + images_path +
                          " (want 2051)");
    const std::uint32_t n = read_u32_be(fi, images_path);
    const std::uint32_t h = read_u32_be(fi, images_path);
    const std::uint32_t w = read_u32_be(fi, images_path);
    std::vector<unsigned char> raw(static_cast<std::size_t>(n) * h * w);
    fi.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!fi) throw IOError("truncated image payload in " + images_path);

    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw IOError("cannot open " + labels_path);
    const std::uint32_t magic_l = read_u32_be(fl, labels_path);
    if (magic_l != 2049)
        throw FormatError("bad labels magic " + std::to_string(magic_l) + " in " + labels_path +
                          " (want 2049)");
    const std::uint32_t nl = read_u32_be(fl, labels_path);
    if (nl != n)
        throw DataError("image/label count mismatch: " + std::to_string(n) + " vs " +
                        std::to_string(nl));
    std::vector<unsigned char> lab(nl);
    fl.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(lab.size()));
    if (!fl) throw IOError("truncated label payload in " + labels_path);

    DatasetHandle ds;
    ds.n = n;
    ds.height = h;
    ds.width = w;
    ds.channels = 1;
    ds.images.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i)
        ds.images[i] = static_cast<float>(raw[i]) / 255.0f;
    ds.labels.assign(lab.begin(), lab.end());
    int max_label = 0;
    for (int y : ds.labels) max_label = std::max(max_label, y);
    ds.num_classes = static_cast<std::size_t>(max_label) + 1;
    ds.validate();
    return ds;
}

DatasetHandle synth_blobs(std::size_t n_per_class, std::size_t m, std::size_t d, double separation,
                          std::uint64_t seed) {
    if (m < 2 || d < 2 || n_per_class == 0) throw ConfigError("synth_blobs: need m >= 2, d >= 2, n > 0");
    const double radius = separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(m)));
    DatasetHandle ds;
    ds.n = n_per_class * m;
    ds.height = 1;
    ds.width = 1;
    ds.channels = d;
    ds.num_classes = m;
    ds.split = "blobs";
    ds.images.resize(ds.n * d);
    ds.labels.resize(ds.n);
    RngStream stream = make_stream(seed, "blobs");
    std::size_t row = 0;
    for (std::size_t c = 0; c < m; ++c) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(m);
        for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
            float* img = ds.images.data() + row * d;
            img[0] = static_cast<float>(radius * std::cos(angle) + stream.normal());
            img[1] = static_cast<float>(radius * std::sin(angle) + stream.normal());
            for (std::size_t k = 2; k < d; ++k) img[k] = static_cast<float>(stream.normal());
            ds.labels[row] = static_cast<int>(c);
        }
    }
    return ds;
}

DatasetHandle load_cifar10(const std::vector<std::string>& batch_paths) {
    constexpr std::size_t kRecord = 3073, kPlane = 1024;
    DatasetHandle ds;
    ds.height = 32;
    ds.width = 32;
    ds.channels = 3;
    ds.num_classes = 10;
    for (const auto& path : batch_paths) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IOError("cannot open " + path);
        f.seekg(0, std::ios::end);
        const std::size_t bytes = static_cast<std::size_t>(f.tellg());
        f.seekg(0);
        if (bytes % kRecord != 0) throw FormatError("file size not a multiple of 3073: " + path);
        std::vector<unsigned char> raw(bytes);
        f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
        if (!f) throw IOError("truncated read in " + path);
        const std::size_t records = bytes / kRecord;
        for (std::size_t r = 0; r < records; ++r) {
            const unsigned char* rec = raw.data() + r * kRecord;
            ds.labels.push_back(static_cast<int>(rec[0]));
            const std::size_t base = ds.images.size();
            ds.images.resize(base + 3 * kPlane);
            // planar RGB to channel-last
            for (std::size_t p = 0; p < kPlane; ++p)
                for (std::size_t c = 0; c < 3; ++c)
                    ds.images[base + p * 3 + c] =
                        static_cast<float>(rec[1 + c * kPlane + p]) / 255.0f;
        }
        ds.n += records;
    }
    ds.validate();
    return ds;
}

}  // namespace noprop
