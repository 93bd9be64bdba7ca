#include "noprop/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "noprop/errors.hpp"

namespace noprop {

const char* const kMetricsHeader =
    "wall_clock_s,epoch,block,ce,kl,l2,train_acc,test_acc,peak_live_nodes";

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string MetricsRow::to_csv() const {
    std::string s;
    s += fmt(wall_clock_s);
    s += ',';
    s += std::to_string(epoch);
    s += ',';
    s += block;
    s += ',';
    s += fmt(ce);
    s += ',';
    s += fmt(kl);
    s += ',';
    s += fmt(l2);
    s += ',';
    s += fmt(train_acc);
    s += ',';
    s += fmt(test_acc);
    s += ',';
    s += std::to_string(peak_live_nodes);
    return s;
}

MetricsWriter::MetricsWriter(const std::string& path) {
    out_.open(path, std::ios::trunc);
    if (!out_) throw IOError("cannot open metrics file " + path);
    out_ << kMetricsHeader << '\n';
    out_.flush();
}

void MetricsWriter::row(const MetricsRow& r) {
    if (!out_.is_open()) return;
    out_ << r.to_csv() << '\n';
}

void MetricsWriter::flush() {
    if (out_.is_open()) out_.flush();
}

}  // namespace noprop
