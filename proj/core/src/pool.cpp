#include "noprop/pool.hpp"

#include <atomic>
#include <mutex>
#include <thread>

namespace noprop {

std::vector<JobError> run_jobs(const std::vector<std::function<void()>>& jobs, std::size_t workers) {
    if (workers == 0) workers = 1;
    workers = std::min(workers, jobs.size());

    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::vector<JobError> errors;

    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            try {
                jobs[i]();
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(err_mutex);
                errors.push_back({i, e.what()});
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                errors.push_back({i, "unknown error"});
            }
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work);
    for (auto& t : threads) t.join();

    std::sort(errors.begin(), errors.end(),
              [](const JobError& a, const JobError& b) { return a.job < b.job; });
    return errors;
}

}  // namespace noprop
