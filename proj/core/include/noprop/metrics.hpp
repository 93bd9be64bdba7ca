#pragma once

#include <fstream>
#include <limits>
#include <string>
#include <vector>

namespace noprop {

// One CSV row of the metrics stream. Absent values (quiet NaN) serialize as
// empty fields. Column order is fixed:
//   wall_clock_s,epoch,block,ce,kl,l2,train_acc,test_acc,peak_live_nodes
struct MetricsRow {
    static constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();

    double wall_clock_s = 0.0;
    std::size_t epoch = 0;
    std::string block;  // block index, "head", or "all"
    double ce = kAbsent;
    double kl = kAbsent;
    double l2 = kAbsent;
    double train_acc = kAbsent;
    double test_acc = kAbsent;
    std::size_t peak_live_nodes = 0;

    std::string to_csv() const;
};

extern const char* const kMetricsHeader;

// Append-only CSV writer; rows become durable at flush (called per epoch so a
// killed run leaves a parseable prefix).
class MetricsWriter {
  public:
    MetricsWriter() = default;
    explicit MetricsWriter(const std::string& path);

    bool enabled() const { return out_.is_open(); }
    void row(const MetricsRow& r);
    void flush();

  private:
    std::ofstream out_;
};

}  // namespace noprop
