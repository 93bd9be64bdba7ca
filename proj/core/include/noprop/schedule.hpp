#pragma once

#include <cstddef>
#include <vector>

#include "noprop/graph.hpp"
#include "noprop/optim.hpp"
#include "noprop/rng.hpp"
#include "noprop/tensor.hpp"

namespace noprop {

// Mean weights and variance of the Gaussian step z_next | z_prev.
struct PosteriorCoefficients {
    double a = 0;  // weight on the clean target
    double b = 0;  // weight on the previous state
    double c = 0;  // variance of the injected noise
};

// Discrete table of signal coefficients, indexed 0..T. Indexing follows the
// reversed convention: t = 0 is the noisiest level and alpha_bar increases
// with t, so SNR(t) is increasing.
struct DiscreteSchedule {
    std::size_t T = 0;
    std::vector<double> alpha_bar;  // size T + 1

    double snr(std::size_t t) const;
    double snr_diff(std::size_t t) const;  // SNR(t) - SNR(t-1), t in [1, T]
    PosteriorCoefficients posterior(std::size_t t) const;
};

// Cosine signal table, time-reversed so alpha_bar is increasing, clipped away
// from {0, 1}.
DiscreteSchedule cosine_alpha_bar(std::size_t T, double s = 0.008, double clip_lo = 1e-4,
                                  double clip_hi = 0.999);

// Coefficients of one ancestral step between two arbitrary signal levels,
// alpha_bar_prev < alpha_bar_next.
PosteriorCoefficients posterior_from_levels(double alpha_bar_prev, double alpha_bar_next);

// Continuous trainable schedule: gamma(t) = g0 + (g1 - g0) * (1 - gbar(t))
// with gbar the unit-normalized output of a two-layer network whose weights
// are kept positive through softplus. SNR(t) = exp(-gamma(t)) and
// alpha_bar(t) = sigmoid(-gamma(t)).
class TrainableGamma {
  public:
    static constexpr const char* kG0 = "gamma0";
    static constexpr const char* kG1 = "gamma1";
    static constexpr const char* kW1 = "g.w1";  // [1, H] unconstrained
    static constexpr const char* kB1 = "g.b1";  // [H]
    static constexpr const char* kW2 = "g.w2";  // [H, 1] unconstrained

    // Populates `store` with the schedule parameters.
    static void init_params(ParamStore& store, std::size_t hidden = 8, double g0 = -7.0,
                            double g1 = 7.0, std::uint64_t seed = 0);

    explicit TrainableGamma(const ParamStore& store) : store_(&store) {}

    double gamma(double t) const;
    double gamma_prime(double t) const;  // analytic d gamma / dt
    double alpha_bar(double t) const;    // sigmoid(-gamma(t))
    double snr(double t) const;          // exp(-gamma(t))
    double snr_prime(double t) const;    // -gamma'(t) * exp(-gamma(t))

    // In-graph evaluation for training. `t` is a [B,1] node of times in
    // [0,1]; `params` must have been registered with graph_param under `tag`.
    struct GraphNodes {
        NodeId gamma;      // [B,1]
        NodeId alpha_bar;  // [B,1]
        NodeId snr_prime;  // [B,1]
        NodeId g0;         // [1]
        NodeId g1;         // [1]
    };
    GraphNodes build(Graph& g, const std::string& tag, NodeId t, std::size_t batch) const;

  private:
    double gamma_tilde(double t) const;
    double gamma_tilde_prime(double t) const;
    const ParamStore* store_;
};

// Reparameterized draw from the marginal q(z | y) at signal level alpha_bar:
// z = sqrt(alpha_bar) * u_y + sqrt(1 - alpha_bar) * eps.
Tensor sample_q_marginal(const Tensor& u_y, double alpha_bar, RngStream& stream);

// Closed-form KL( N(sqrt(a0) u_y, (1-a0) I) || N(0, I) ).
double gaussian_kl_to_standard(const Tensor& u_y, double alpha_bar0);

}  // namespace noprop
