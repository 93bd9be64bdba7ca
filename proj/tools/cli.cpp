#include "cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "noprop/checkpoint.hpp"
#include "noprop/checks.hpp"
#include "noprop/config.hpp"
#include "noprop/dataset.hpp"
#include "noprop/errors.hpp"
#include "noprop/inference.hpp"
#include "noprop/trainer.hpp"

namespace noprop::cli {

namespace {

struct DataOptions {
    std::string dataset = "blobs";
    std::string data_dir = "data";
    std::size_t blobs_per_class = 100;
    std::size_t blobs_classes = 2;
    double blobs_separation = 10.0;
};

void add_data_options(CLI::App* cmd, DataOptions& opts) {
    cmd->add_option("--dataset", opts.dataset, "Dataset: blobs, mnist or cifar10")
        ->check(CLI::IsMember({"blobs", "mnist", "cifar10"}));
    cmd->add_option("--data-dir", opts.data_dir, "Directory holding mnist/cifar10 files");
    cmd->add_option("--blobs-n", opts.blobs_per_class, "Blob points per class");
    cmd->add_option("--blobs-m", opts.blobs_classes, "Blob class count");
    cmd->add_option("--blobs-sep", opts.blobs_separation, "Blob center separation");
}

DatasetHandle load_train_split(const DataOptions& opts, std::uint64_t seed) {
    if (opts.dataset == "blobs")
        return synth_blobs(opts.blobs_per_class, opts.blobs_classes, 2, opts.blobs_separation, seed);
    if (opts.dataset == "mnist")
        return load_idx(opts.data_dir + "/train-images-idx3-ubyte",
                        opts.data_dir + "/train-labels-idx1-ubyte");
    std::vector<std::string> batches;
    for (int i = 1; i <= 5; ++i)
        batches.push_back(opts.data_dir + "/data_batch_" + std::to_string(i) + ".bin");
    return load_cifar10(batches);
}

std::optional<DatasetHandle> load_test_split(const DataOptions& opts, std::uint64_t seed) {
    if (opts.dataset == "blobs") {
        // held-out draw from the same blob distribution
        return synth_blobs(opts.blobs_per_class, opts.blobs_classes, 2, opts.blobs_separation,
                           detail::mix64(seed, 0x7e57));
    }
    if (opts.dataset == "mnist")
        return load_idx(opts.data_dir + "/t10k-images-idx3-ubyte",
                        opts.data_dir + "/t10k-labels-idx1-ubyte");
    return load_cifar10({opts.data_dir + "/test_batch.bin"});
}

int cmd_train(const DataOptions& data, const std::string& config_path, const std::string& method_flag,
              std::optional<std::uint64_t> seed_flag, bool parallel_flag,
              std::optional<std::size_t> epochs_flag, const std::string& out_path,
              const std::string& metrics_path) {
    // precedence: method-conditional defaults < config file < flags
    Method method = Method::DT;
    if (!config_path.empty()) method = config_from_file(config_path).method;
    if (!method_flag.empty()) method = method_from_name(method_flag);

    TrainConfig cfg;
    cfg.method = method;
    apply_method_defaults(cfg);
    if (!config_path.empty()) cfg = config_from_file(config_path, cfg);
    cfg.method = method;
    if (seed_flag) cfg.seed = *seed_flag;
    if (parallel_flag) cfg.parallel = true;
    if (epochs_flag) cfg.epochs = *epochs_flag;
    if (data.dataset == "blobs" && config_path.empty()) {
        // desk-scale defaults for the synthetic task; a config file overrides
        cfg.block = BlockConfig::mlp();
        cfg.optimizer.lr = 0.01;
        cfg.batch = 16;
    }

    const DatasetHandle train_ds = load_train_split(data, cfg.seed);
    std::optional<DatasetHandle> test_ds;
    try {
        test_ds = load_test_split(data, cfg.seed);
    } catch (const Error&) {
        test_ds.reset();  // test split optional for training
    }

    ModelBundle bundle = ModelBundle::create(cfg, train_ds);
    MetricsWriter writer;
    if (!metrics_path.empty()) writer = MetricsWriter(metrics_path);

    const TrainResult result =
        train(bundle, train_ds, test_ds ? &*test_ds : nullptr, writer.enabled() ? &writer : nullptr);

    std::printf("trained %s on %s: %zu epochs", method_name(cfg.method), data.dataset.c_str(),
                bundle.epochs_completed);
    if (!std::isnan(result.final_train_acc))
        std::printf(", train acc %.4f", result.final_train_acc);
    if (!std::isnan(result.final_test_acc)) std::printf(", test acc %.4f", result.final_test_acc);
    std::printf(", peak live nodes %zu\n", result.peak_live_nodes);

    if (!out_path.empty()) {
        save_checkpoint(bundle, out_path);
        std::printf("checkpoint written to %s\n", out_path.c_str());
    }
    return 0;
}

int cmd_eval(const std::string& ckpt, const DataOptions& data, std::optional<std::size_t> steps,
             const std::string& split) {
    ModelBundle bundle = load_checkpoint(ckpt);
    DatasetHandle ds = split == "train" ? load_train_split(data, bundle.seed)
                                        : *load_test_split(data, bundle.seed);
    InferenceConfig cfg;
    cfg.steps = steps ? *steps : bundle.cfg.inference_steps;
    const double acc = evaluate_accuracy(bundle, ds, cfg, bundle.seed, 0);
    std::printf("%s %s accuracy: %.4f (%zu examples)\n", data.dataset.c_str(), split.c_str(), acc,
                ds.n);
    return 0;
}

Tensor load_image_for(const ModelBundle& bundle, const std::string& path, std::size_t index) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IOError("cannot open image file " + path);
    unsigned char head[4] = {0, 0, 0, 0};
    probe.read(reinterpret_cast<char*>(head), 4);
    probe.close();
    const bool is_idx = head[0] == 0 && head[1] == 0 && head[2] == 0x08 && head[3] == 0x03;

    const std::size_t dim = bundle.img_c * bundle.img_h * bundle.img_w;
    std::vector<real> pixels;
    if (is_idx) {
        // single image out of an IDX container (labels not needed)
        std::ifstream f(path, std::ios::binary);
        unsigned char b4[4];
        auto read_u32 = [&] {
            f.read(reinterpret_cast<char*>(b4), 4);
            if (!f) throw IOError("truncated IDX header in " + path);
            return (std::uint32_t(b4[0]) << 24) | (std::uint32_t(b4[1]) << 16) |
                   (std::uint32_t(b4[2]) << 8) | std::uint32_t(b4[3]);
        };
        read_u32();
        const std::uint32_t n = read_u32();
        const std::uint32_t h = read_u32();
        const std::uint32_t w = read_u32();
        if (index >= n) throw RangeError("image index out of range");
        if (static_cast<std::size_t>(h) * w != dim)
            throw ShapeError("image size " + std::to_string(h) + "x" + std::to_string(w) +
                             " does not match the model input");
        std::vector<unsigned char> raw(dim);
        f.seekg(16 + static_cast<std::streamoff>(index) * static_cast<std::streamoff>(dim));
        f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(dim));
        if (!f) throw IOError("truncated IDX payload in " + path);
        pixels.resize(dim);
        for (std::size_t i = 0; i < dim; ++i) pixels[i] = static_cast<real>(raw[i]) / real(255);
    } else {
        std::ifstream f(path);
        double v;
        while (f >> v) pixels.push_back(static_cast<real>(v));
        if (pixels.size() != dim)
            throw ShapeError("expected " + std::to_string(dim) + " values, got " +
                             std::to_string(pixels.size()));
    }

    if (bundle.cfg.block.arch == BlockArch::Conv) {
        // pixels are channel-last; conv pathways take [1, C, H, W]
        Tensor out(Shape{1, bundle.img_c, bundle.img_h, bundle.img_w});
        const std::size_t hw = bundle.img_h * bundle.img_w;
        for (std::size_t p2 = 0; p2 < hw; ++p2)
            for (std::size_t c = 0; c < bundle.img_c; ++c)
                out[c * hw + p2] = pixels[p2 * bundle.img_c + c];
        return out;
    }
    return Tensor(Shape{1, dim}, std::move(pixels));
}

int cmd_predict(const std::string& ckpt, const std::string& image_path, std::size_t index,
                std::optional<std::size_t> steps) {
    ModelBundle bundle = load_checkpoint(ckpt);
    const Tensor x = load_image_for(bundle, image_path, index);
    InferenceConfig cfg;
    cfg.steps = steps ? *steps : bundle.cfg.inference_steps;
    const auto preds = infer(bundle, x, cfg, make_stream(bundle.seed, "predict"));
    std::printf("predicted class: %d\n", preds[0].label);
    if (preds[0].probs.numel()) {
        std::printf("probabilities:");
        for (std::size_t j = 0; j < preds[0].probs.numel(); ++j)
            std::printf(" %.6f", static_cast<double>(preds[0].probs[j]));
        std::printf("\n");
    }
    return 0;
}

int cmd_check(std::uint64_t seed) {
    const auto results = checks::run_all(seed);
    std::size_t failed = 0;
    for (const auto& r : results) {
        std::printf("[%s] %-64s metric %.3e (bound %.1e)%s%s\n", r.pass ? "PASS" : "FAIL",
                    r.name.c_str(), r.metric, r.threshold, r.note.empty() ? "" : " — ",
                    r.note.c_str());
        if (!r.pass) ++failed;
    }
    std::printf("%zu/%zu checks passed\n", results.size() - failed, results.size());
    return failed == 0 ? 0 : 1;
}

int cmd_bench_mem() {
    const std::size_t dt2 = probe_peak_live_nodes(Method::DT, 2);
    const std::size_t dt10 = probe_peak_live_nodes(Method::DT, 10);
    const std::size_t bp2 = probe_peak_live_nodes(Method::Backprop, 2);
    const std::size_t bp10 = probe_peak_live_nodes(Method::Backprop, 10);
    std::printf("peak live graph nodes during one update\n");
    std::printf("  method      T=2     T=10    growth\n");
    std::printf("  dt        %5zu    %5zu    %.2fx\n", dt2, dt10,
                static_cast<double>(dt10) / static_cast<double>(dt2));
    std::printf("  backprop  %5zu    %5zu    %.2fx\n", bp2, bp10,
                static_cast<double>(bp10) / static_cast<double>(bp2));
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"Back-propagation-free denoising trainers (dt/ct/fm) with an end-to-end baseline"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    DataOptions train_data;
    add_data_options(train_cmd, train_data);
    std::string method_flag, config_path, out_path, metrics_path;
    std::optional<std::uint64_t> seed_flag;
    std::optional<std::size_t> epochs_flag;
    bool parallel_flag = false;
    train_cmd->add_option("--method", method_flag, "dt, ct, fm or backprop")
        ->check(CLI::IsMember({"dt", "ct", "fm", "backprop"}));
    train_cmd->add_option("--config", config_path, "key = value config file");
    train_cmd->add_option("--out", out_path, "checkpoint output path");
    train_cmd->add_option("--metrics", metrics_path, "metrics CSV output path");
    train_cmd->add_option("--seed", seed_flag, "master seed");
    train_cmd->add_option("--epochs", epochs_flag, "epoch count override");
    train_cmd->add_flag("--parallel", parallel_flag, "train blocks on parallel workers (dt)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    DataOptions eval_data;
    add_data_options(eval_cmd, eval_data);
    std::string eval_ckpt, eval_split = "test";
    std::optional<std::size_t> eval_steps;
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--steps", eval_steps, "inference step count");
    eval_cmd->add_option("--split", eval_split, "train or test")
        ->check(CLI::IsMember({"train", "test"}));

    // predict
    auto* predict_cmd = app.add_subcommand("predict", "Predict the class of one image");
    std::string predict_ckpt, image_path;
    std::size_t image_index = 0;
    std::optional<std::size_t> predict_steps;
    predict_cmd->add_option("--ckpt", predict_ckpt, "checkpoint path")->required();
    predict_cmd->add_option("--image", image_path, "IDX file or whitespace-separated floats")
        ->required();
    predict_cmd->add_option("--index", image_index, "image index within an IDX file");
    predict_cmd->add_option("--steps", predict_steps, "inference step count");

    // check
    auto* check_cmd = app.add_subcommand("check", "Run the oracle and property suite");
    std::uint64_t check_seed = 0;
    check_cmd->add_option("--seed", check_seed, "oracle seed");

    // bench-mem
    app.add_subcommand("bench-mem", "Report peak live-graph nodes for dt vs backprop");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::flush;
        return 2;
    }

    try {
        if (train_cmd->parsed())
            return cmd_train(train_data, config_path, method_flag, seed_flag, parallel_flag,
                             epochs_flag, out_path, metrics_path);
        if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_steps, eval_split);
        if (predict_cmd->parsed())
            return cmd_predict(predict_ckpt, image_path, image_index, predict_steps);
        if (check_cmd->parsed()) return cmd_check(check_seed);
        return cmd_bench_mem();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
}

}  // namespace noprop::cli
