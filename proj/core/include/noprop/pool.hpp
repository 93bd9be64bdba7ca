#pragma once

#include <functional>
#include <string>
#include <vector>

namespace noprop {

struct JobError {
    std::size_t job = 0;
    std::string message;
};

// Run independent jobs on up to `workers` threads. Exceptions are captured
// per job; the remaining jobs still run to completion.
std::vector<JobError> run_jobs(const std::vector<std::function<void()>>& jobs, std::size_t workers);

}  // namespace noprop
