#include "noprop/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "noprop/errors.hpp"

namespace noprop {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("bad numeric value '" + v + "' for key '" + key + "'");
    }
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("bad integer value '" + v + "' for key '" + key + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("bad boolean value '" + v + "' for key '" + key + "'");
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void config_apply(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "method") cfg.method = method_from_name(value);
    else if (key == "T") cfg.T = parse_uint(key, value);
    else if (key == "batch") cfg.batch = parse_uint(key, value);
    else if (key == "epochs") cfg.epochs = parse_uint(key, value);
    else if (key == "eta") cfg.eta = parse_double(key, value);
    else if (key == "optimizer") {
        if (value == "adamw") cfg.optimizer.kind = OptimizerKind::AdamW;
        else if (value == "adam") cfg.optimizer.kind = OptimizerKind::Adam;
        else throw ConfigError("unknown optimizer '" + value + "'");
    } else if (key == "lr") cfg.optimizer.lr = parse_double(key, value);
    else if (key == "beta1") cfg.optimizer.beta1 = parse_double(key, value);
    else if (key == "beta2") cfg.optimizer.beta2 = parse_double(key, value);
    else if (key == "opt_eps") cfg.optimizer.eps = parse_double(key, value);
    else if (key == "weight_decay") cfg.optimizer.weight_decay = parse_double(key, value);
    else if (key == "embed_mode") cfg.embed_mode = embed_mode_from_name(value);
    else if (key == "embed_dim") cfg.embed_dim = parse_uint(key, value);
    else if (key == "head") cfg.head = head_kind_from_name(value);
    else if (key == "radial_sigma") cfg.radial_sigma = parse_double(key, value);
    else if (key == "seed") cfg.seed = parse_uint(key, value);
    else if (key == "parallel") cfg.parallel = parse_bool(key, value);
    else if (key == "workers") cfg.workers = parse_uint(key, value);
    else if (key == "fm_sigma") cfg.fm_sigma = parse_double(key, value);
    else if (key == "arch") {
        if (value == "conv") cfg.block.arch = BlockArch::Conv;
        else if (value == "mlp") cfg.block.arch = BlockArch::Mlp;
        else throw ConfigError("unknown arch '" + value + "'");
    } else if (key == "conv1_channels") cfg.block.conv1_channels = parse_uint(key, value);
    else if (key == "conv2_channels") cfg.block.conv2_channels = parse_uint(key, value);
    else if (key == "feat_width") cfg.block.feat_width = parse_uint(key, value);
    else if (key == "fusion_width") cfg.block.fusion_width = parse_uint(key, value);
    else if (key == "time_embed_dim") cfg.block.time_embed_dim = parse_uint(key, value);
    else if (key == "time_feat_width") cfg.block.time_feat_width = parse_uint(key, value);
    else if (key == "dropout_p") cfg.block.dropout_p = parse_double(key, value);
    else if (key == "batchnorm") cfg.block.batchnorm = parse_bool(key, value);
    else if (key == "gamma_hidden") cfg.gamma_hidden = parse_uint(key, value);
    else if (key == "inference_steps") cfg.inference_steps = parse_uint(key, value);
    else if (key == "eval_train_max") cfg.eval_train_max = parse_uint(key, value);
    else if (key == "eval_each_epoch") cfg.eval_each_epoch = parse_bool(key, value);
    else if (key == "wall_clock") cfg.wall_clock = parse_bool(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig config_from_text(const std::string& text, TrainConfig base) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" +
                              line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
        config_apply(base, key, value);
    }
    return base;
}

TrainConfig config_from_file(const std::string& path, TrainConfig base) {
    std::ifstream f(path);
    if (!f) throw IOError("cannot open config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return config_from_text(ss.str(), base);
}

std::string config_to_text(const TrainConfig& cfg) {
    std::ostringstream out;
    out << "method = " << method_name(cfg.method) << '\n';
    out << "T = " << cfg.T << '\n';
    out << "batch = " << cfg.batch << '\n';
    out << "epochs = " << cfg.epochs << '\n';
    out << "eta = " << fmt_double(cfg.eta) << '\n';
    out << "optimizer = " << (cfg.optimizer.kind == OptimizerKind::AdamW ? "adamw" : "adam") << '\n';
    out << "lr = " << fmt_double(cfg.optimizer.lr) << '\n';
    out << "beta1 = " << fmt_double(cfg.optimizer.beta1) << '\n';
    out << "beta2 = " << fmt_double(cfg.optimizer.beta2) << '\n';
    out << "opt_eps = " << fmt_double(cfg.optimizer.eps) << '\n';
    out << "weight_decay = " << fmt_double(cfg.optimizer.weight_decay) << '\n';
    out << "embed_mode = " << embed_mode_name(cfg.embed_mode) << '\n';
    out << "embed_dim = " << cfg.embed_dim << '\n';
    out << "head = " << head_kind_name(cfg.head) << '\n';
    out << "radial_sigma = " << fmt_double(cfg.radial_sigma) << '\n';
    out << "seed = " << cfg.seed << '\n';
    out << "parallel = " << (cfg.parallel ? "true" : "false") << '\n';
    out << "workers = " << cfg.workers << '\n';
    out << "fm_sigma = " << fmt_double(cfg.fm_sigma) << '\n';
    out << "arch = " << (cfg.block.arch == BlockArch::Conv ? "conv" : "mlp") << '\n';
    out << "conv1_channels = " << cfg.block.conv1_channels << '\n';
    out << "conv2_channels = " << cfg.block.conv2_channels << '\n';
    out << "feat_width = " << cfg.block.feat_width << '\n';
    out << "fusion_width = " << cfg.block.fusion_width << '\n';
    out << "time_embed_dim = " << cfg.block.time_embed_dim << '\n';
    out << "time_feat_width = " << cfg.block.time_feat_width << '\n';
    out << "dropout_p = " << fmt_double(cfg.block.dropout_p) << '\n';
    out << "batchnorm = " << (cfg.block.batchnorm ? "true" : "false") << '\n';
    out << "gamma_hidden = " << cfg.gamma_hidden << '\n';
    out << "inference_steps = " << cfg.inference_steps << '\n';
    out << "eval_train_max = " << cfg.eval_train_max << '\n';
    out << "eval_each_epoch = " << (cfg.eval_each_epoch ? "true" : "false") << '\n';
    out << "wall_clock = " << (cfg.wall_clock ? "true" : "false") << '\n';
    return out.str();
}

}  // namespace noprop
