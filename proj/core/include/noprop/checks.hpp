#pragma once

#include <string>
#include <vector>

namespace noprop::checks {

struct CheckResult {
    std::string name;
    bool pass = false;
    double metric = 0.0;     // measured value (e.g. max rel err)
    double threshold = 0.0;  // pass bound
    std::string note;
};

// (a) every primitive against central finite differences
std::vector<CheckResult> primitive_grad_checks(std::uint64_t seed = 0);
// (a) full blocks and full per-method losses against finite differences
std::vector<CheckResult> block_grad_checks(std::uint64_t seed = 0);
// (b) posterior coefficients against a 1-d grid-quadrature Bayes oracle
CheckResult bayes_posterior_check(std::size_t pairs = 100, std::uint64_t seed = 0);
// (c) closed-form prior KL against a 10^6-sample Monte-Carlo estimator
std::vector<CheckResult> mc_kl_checks(std::uint64_t seed = 0);
// (d) telescoping sum of SNR differences
CheckResult telescoping_check();
// (e) t-enumerated average of the per-step objective equals the full sum
CheckResult unbiasedness_check(std::uint64_t seed = 0);

std::vector<CheckResult> run_all(std::uint64_t seed = 0);

}  // namespace noprop::checks
