#pragma once

// Test-only oracles, independent of the library's computation paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "noprop/dataset.hpp"
#include "noprop/rng.hpp"

namespace oracles {

// Scalar Adam / AdamW recurrence, step-by-step.
struct ScalarAdam {
    double m = 0, v = 0;
    long step = 0;

    double update(double theta, double grad, bool decoupled, double lr, double b1, double b2,
                  double eps, double wd) {
        double g = grad;
        if (!decoupled) g += wd * theta;
        ++step;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, step));
        const double vh = v / (1 - std::pow(b2, step));
        double next = theta - lr * mh / (std::sqrt(vh) + eps);
        if (decoupled) next -= lr * wd * theta;
        return next;
    }
};

// Plain perceptron; returns training accuracy after `iters` passes.
inline double perceptron_accuracy(const noprop::DatasetHandle& ds, int iters = 200) {
    const std::size_t d = ds.image_dim();
    std::vector<double> w(d + 1, 0.0);
    for (int it = 0; it < iters; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < ds.n; ++i) {
            double act = w[d];
            for (std::size_t k = 0; k < d; ++k)
                act += w[k] * static_cast<double>(ds.images[i * d + k]);
            const int pred = act >= 0 ? 1 : 0;
            if (pred != ds.labels[i]) {
                const double sign = ds.labels[i] == 1 ? 1.0 : -1.0;
                for (std::size_t k = 0; k < d; ++k)
                    w[k] += sign * static_cast<double>(ds.images[i * d + k]);
                w[d] += sign;
                changed = true;
            }
        }
        if (!changed) break;
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.n; ++i) {
        double act = w[d];
        for (std::size_t k = 0; k < d; ++k) act += w[k] * static_cast<double>(ds.images[i * d + k]);
        if ((act >= 0 ? 1 : 0) == ds.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.n);
}

// Brute-force prototype selection: index of the image with the smallest
// median Euclidean distance to the other images of its class.
inline std::size_t brute_force_prototype(const std::vector<std::vector<double>>& images) {
    std::size_t best = 0;
    double best_median = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < images.size(); ++i) {
        std::vector<double> dists;
        for (std::size_t j = 0; j < images.size(); ++j) {
            if (j == i) continue;
            double acc = 0;
            for (std::size_t k = 0; k < images[i].size(); ++k) {
                const double diff = images[i][k] - images[j][k];
                acc += diff * diff;
            }
            dists.push_back(std::sqrt(acc));
        }
        std::sort(dists.begin(), dists.end());
        double median = 0;
        if (!dists.empty()) {
            const std::size_t h = dists.size() / 2;
            median = dists.size() % 2 ? dists[h] : 0.5 * (dists[h - 1] + dists[h]);
        }
        if (median < best_median) {
            best_median = median;
            best = i;
        }
    }
    return best;
}

// Direct convolution by index-walking (independent of the library loops).
inline std::vector<double> direct_conv2d(const std::vector<double>& x, std::size_t C, std::size_t H,
                                         std::size_t W, const std::vector<double>& k, std::size_t OC,
                                         std::size_t KH, std::size_t KW, int stride, int pad,
                                         std::size_t& OH, std::size_t& OW) {
    OH = (H + 2 * pad - KH) / stride + 1;
    OW = (W + 2 * pad - KW) / stride + 1;
    std::vector<double> out(OC * OH * OW, 0.0);
    for (std::size_t oc = 0; oc < OC; ++oc)
        for (std::size_t oh = 0; oh < OH; ++oh)
            for (std::size_t ow = 0; ow < OW; ++ow) {
                double acc = 0;
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t kh = 0; kh < KH; ++kh)
                        for (std::size_t kw = 0; kw < KW; ++kw) {
                            const long ih = static_cast<long>(oh) * stride - pad + static_cast<long>(kh);
                            const long iw = static_cast<long>(ow) * stride - pad + static_cast<long>(kw);
                            if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) ||
                                iw >= static_cast<long>(W))
                                continue;
                            acc += x[(c * H + ih) * W + iw] * k[((oc * C + c) * KH + kh) * KW + kw];
                        }
                out[(oc * OH + oh) * OW + ow] = acc;
            }
    return out;
}

}  // namespace oracles
