#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <vector>
#include <unistd.h>

#include "cli.hpp"

namespace {

namespace fs = std::filesystem;

int run_cli(std::initializer_list<const char*> args) {
    std::vector<const char*> argv{"noprop"};
    argv.insert(argv.end(), args.begin(), args.end());
    return noprop::cli::run(static_cast<int>(argv.size()), argv.data());
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("noprop-cli-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { std::error_code ec; fs::remove_all(path, ec); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("unknown flags and subcommands exit with code 2") {
    CHECK(run_cli({"no-such-subcommand"}) == 2);
    CHECK(run_cli({"train", "--no-such-flag"}) == 2);
    CHECK(run_cli({"train", "--method", "nonsense"}) == 2);
    CHECK(run_cli({}) == 2);
}

TEST_CASE("eval with a missing checkpoint exits 1") {
    CHECK(run_cli({"eval", "--ckpt", "/nonexistent/model.nprp", "--dataset", "blobs"}) == 1);
}

TEST_CASE("train, checkpoint, eval and predict round trip") {
    TempDir tmp;
    const std::string ckpt = tmp.file("blobs.nprp");
    const std::string metrics = tmp.file("metrics.csv");
    CHECK(run_cli({"train", "--method", "dt", "--dataset", "blobs", "--blobs-n", "30", "--epochs",
                   "8", "--seed", "3", "--out", ckpt.c_str(), "--metrics", metrics.c_str()}) == 0);
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(metrics));

    // metrics CSV has the documented header
    std::ifstream m(metrics);
    std::string header;
    std::getline(m, header);
    CHECK(header == "wall_clock_s,epoch,block,ce,kl,l2,train_acc,test_acc,peak_live_nodes");

    CHECK(run_cli({"eval", "--ckpt", ckpt.c_str(), "--dataset", "blobs", "--blobs-n", "30",
                   "--split", "train", "--steps", "20"}) == 0);

    // single-image prediction from a plain text file
    const std::string img = tmp.file("point.txt");
    std::ofstream(img) << "4.9 0.2\n";
    CHECK(run_cli({"predict", "--ckpt", ckpt.c_str(), "--image", img.c_str()}) == 0);

    // wrong input size is a runtime failure
    const std::string bad = tmp.file("bad.txt");
    std::ofstream(bad) << "1 2 3\n";
    CHECK(run_cli({"predict", "--ckpt", ckpt.c_str(), "--image", bad.c_str()}) == 1);
}

TEST_CASE("config file keys are honored and flags override them") {
    TempDir tmp;
    const std::string conf = tmp.file("run.conf");
    std::ofstream(conf) << "method = dt\nepochs = 2\nbatch = 16\nT = 2\narch = mlp\n"
                        << "feat_width = 8\nfusion_width = 8\nlr = 0.01\nseed = 5\n"
                        << "eval_each_epoch = false\ninference_steps = 10\n";
    const std::string ckpt = tmp.file("conf.nprp");
    CHECK(run_cli({"train", "--dataset", "blobs", "--blobs-n", "10", "--config", conf.c_str(),
                   "--seed", "9", "--out", ckpt.c_str()}) == 0);
    CHECK(fs::exists(ckpt));

    const std::string bad_conf = tmp.file("bad.conf");
    std::ofstream(bad_conf) << "unknown_key = 1\n";
    CHECK(run_cli({"train", "--dataset", "blobs", "--config", bad_conf.c_str()}) == 1);
}
