#include "noprop/schedule.hpp"

#include <cmath>
#include <numbers>

#include "noprop/errors.hpp"

namespace noprop {

namespace {

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) {
    if (x > 0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

}  // namespace

double DiscreteSchedule::snr(std::size_t t) const {
    if (t > T) throw RangeError("snr: t = " + std::to_string(t) + " > T = " + std::to_string(T));
    const double ab = alpha_bar[t];
    return ab / (1.0 - ab);
}

double DiscreteSchedule::snr_diff(std::size_t t) const {
    if (t < 1 || t > T) throw RangeError("snr_diff: t out of [1, T]");
    return snr(t) - snr(t - 1);
}

PosteriorCoefficients DiscreteSchedule::posterior(std::size_t t) const {
    if (t < 1 || t > T) throw RangeError("posterior: t out of [1, T]");
    return posterior_from_levels(alpha_bar[t - 1], alpha_bar[t]);
}

PosteriorCoefficients posterior_from_levels(double ab_prev, double ab_next) {
    // one-step signal ratio: alpha = ab_prev / ab_next
    const double alpha = ab_prev / ab_next;
    PosteriorCoefficients pc;
    pc.a = std::sqrt(ab_next) * (1.0 - alpha) / (1.0 - ab_prev);
    pc.b = std::sqrt(alpha) * (1.0 - ab_next) / (1.0 - ab_prev);
    pc.c = (1.0 - ab_next) * (1.0 - alpha) / (1.0 - ab_prev);
    return pc;
}

DiscreteSchedule cosine_alpha_bar(std::size_t T, double s, double clip_lo, double clip_hi) {
    if (T < 1) throw ConfigError("cosine schedule: T must be >= 1");
    if (!(clip_lo > 0.0 && clip_lo < clip_hi && clip_hi < 1.0))
        throw ConfigError("cosine schedule: need 0 < lo < hi < 1");
    auto f = [&](double u) {
        const double arg = ((u / static_cast<double>(T)) + s) / (1.0 + s) * std::numbers::pi / 2.0;
        const double c = std::cos(arg);
        return c * c;
    };
    DiscreteSchedule sched;
    sched.T = T;
    sched.alpha_bar.resize(T + 1);
    const double f0 = f(0.0);
    for (std::size_t t = 0; t <= T; ++t) {
        const double v = f(static_cast<double>(T - t)) / f0;
        sched.alpha_bar[t] = std::min(clip_hi, std::max(clip_lo, v));
    }
    return sched;
}

void TrainableGamma::init_params(ParamStore& store, std::size_t hidden, double g0, double g1,
                                 std::uint64_t seed) {
    RngStream stream = make_stream(seed, "gamma-init");
    store.add(kG0, Tensor::scalar(static_cast<real>(g0)));
    store.add(kG1, Tensor::scalar(static_cast<real>(g1)));
    // Unconstrained values near softplus^{-1}(1) so positive weights start around 1.
    Tensor w1(Shape{1, hidden}), b1(Shape{hidden}), w2(Shape{hidden, 1});
    for (std::size_t i = 0; i < hidden; ++i) {
        w1[i] = static_cast<real>(0.54 + 0.1 * stream.normal());
        b1[i] = static_cast<real>(-1.0 + 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(hidden));
        w2[i] = static_cast<real>(0.54 + 0.1 * stream.normal());
    }
    store.add(kW1, std::move(w1));
    store.add(kB1, std::move(b1));
    store.add(kW2, std::move(w2));
}

double TrainableGamma::gamma_tilde(double t) const {
    const Tensor& w1 = store_->value(kW1);
    const Tensor& b1 = store_->value(kB1);
    const Tensor& w2 = store_->value(kW2);
    double acc = 0;
    for (std::size_t i = 0; i < b1.numel(); ++i) {
        const double h = softplus(static_cast<double>(w1[i])) * t + static_cast<double>(b1[i]);
        acc += softplus(static_cast<double>(w2[i])) * sigmoid(h);
    }
    return acc;
}

double TrainableGamma::gamma_tilde_prime(double t) const {
    const Tensor& w1 = store_->value(kW1);
    const Tensor& b1 = store_->value(kB1);
    const Tensor& w2 = store_->value(kW2);
    double acc = 0;
    for (std::size_t i = 0; i < b1.numel(); ++i) {
        const double w1p = softplus(static_cast<double>(w1[i]));
        const double h = w1p * t + static_cast<double>(b1[i]);
        const double sh = sigmoid(h);
        acc += softplus(static_cast<double>(w2[i])) * sh * (1.0 - sh) * w1p;
    }
    return acc;
}

double TrainableGamma::gamma(double t) const {
    const double g0 = store_->value(kG0).item();
    const double g1 = store_->value(kG1).item();
    const double gt0 = gamma_tilde(0.0), gt1 = gamma_tilde(1.0);
    const double gbar = (gamma_tilde(t) - gt0) / (gt1 - gt0);
    return g0 + (g1 - g0) * (1.0 - gbar);
}

double TrainableGamma::gamma_prime(double t) const {
    const double g0 = store_->value(kG0).item();
    const double g1 = store_->value(kG1).item();
    const double gt0 = gamma_tilde(0.0), gt1 = gamma_tilde(1.0);
    return -(g1 - g0) * gamma_tilde_prime(t) / (gt1 - gt0);
}

double TrainableGamma::alpha_bar(double t) const { return sigmoid(-gamma(t)); }
double TrainableGamma::snr(double t) const { return std::exp(-gamma(t)); }
double TrainableGamma::snr_prime(double t) const { return -gamma_prime(t) * std::exp(-gamma(t)); }

TrainableGamma::GraphNodes TrainableGamma::build(Graph& g, const std::string& tag, NodeId t,
                                                 std::size_t batch) const {
    const std::size_t H = store_->value(kB1).numel();
    const NodeId g0 = graph_param(g, *store_, tag, kG0);
    const NodeId g1 = graph_param(g, *store_, tag, kG1);
    const NodeId w1p = g.softplus(graph_param(g, *store_, tag, kW1));  // [1,H]
    const NodeId b1 = graph_param(g, *store_, tag, kB1);               // [H]
    const NodeId w2p = g.softplus(graph_param(g, *store_, tag, kW2));  // [H,1]

    // gamma_tilde at the sampled times, with the same subgraph evaluated at
    // the endpoints for normalization.
    auto tilde = [&](NodeId times) {
        const NodeId h = g.add(g.mul(times, w1p), b1);  // [B,1]*[1,H] -> [B,H]
        return g.linear(g.sigmoid(h), w2p);             // [B,1]
    };
    const NodeId gt = tilde(t);
    const NodeId gt0 = tilde(g.leaf_const(Tensor(Shape{1, 1}, real(0))));
    const NodeId gt1 = tilde(g.leaf_const(Tensor(Shape{1, 1}, real(1))));
    const NodeId span = g.reciprocal(g.sub(gt1, gt0));  // [1,1]
    const NodeId gbar = g.mul(g.sub(gt, gt0), span);    // [B,1]

    const NodeId one = g.leaf_const(Tensor(Shape{1, 1}, real(1)));
    const NodeId dg = g.sub(g1, g0);
    const NodeId gamma = g.add(g0, g.mul(dg, g.sub(one, gbar)));  // [B,1]

    // gamma'(t) = -(g1-g0) * tilde'(t) / (tilde(1)-tilde(0))
    const NodeId h = g.add(g.mul(t, w1p), b1);
    const NodeId sh = g.sigmoid(h);
    const NodeId shp = g.mul(sh, g.sub(one, sh));                      // [B,H]
    const NodeId wprod = g.mul(g.reshape(w1p, Shape{H, 1}), w2p);      // [H,1]
    const NodeId tilde_prime = g.linear(shp, wprod);                   // [B,1]
    const NodeId gamma_prime = g.scalar_mul(g.mul(g.mul(dg, tilde_prime), span), real(-1));

    GraphNodes out;
    out.g0 = g0;
    out.g1 = g1;
    out.gamma = gamma;
    out.alpha_bar = g.sigmoid(g.scalar_mul(gamma, real(-1)));
    out.snr_prime = g.mul(g.scalar_mul(gamma_prime, real(-1)), g.exp(g.scalar_mul(gamma, real(-1))));
    (void)batch;
    return out;
}

Tensor sample_q_marginal(const Tensor& u_y, double alpha_bar, RngStream& stream) {
    if (!(alpha_bar > 0.0 && alpha_bar < 1.0))
        throw RangeError("sample_q_marginal: alpha_bar must be in (0,1)");
    const double sa = std::sqrt(alpha_bar);
    const double sn = std::sqrt(1.0 - alpha_bar);
    Tensor z(u_y.shape());
    for (std::size_t i = 0; i < z.numel(); ++i)
        z[i] = static_cast<real>(sa * static_cast<double>(u_y[i]) + sn * stream.normal());
    return z;
}

double gaussian_kl_to_standard(const Tensor& u_y, double alpha_bar0) {
    if (!(alpha_bar0 >= 0.0 && alpha_bar0 < 1.0))
        throw RangeError("gaussian_kl_to_standard: alpha_bar0 must be in [0,1)");
    const double d = static_cast<double>(u_y.numel());
    const double norm2 = static_cast<double>(sq_l2(u_y));
    return 0.5 * (alpha_bar0 * norm2 + d * (1.0 - alpha_bar0) - d - d * std::log(1.0 - alpha_bar0));
}

}  // namespace noprop
