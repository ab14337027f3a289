#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("magskin-clitest-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
    static int counter;
};
int TempDir::counter = 0;

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const char* cli_path() {
    if (const char* p = std::getenv("MAGSKIN_CLI_PATH")) return p;
#ifdef MAGSKIN_CLI_PATH
    return MAGSKIN_CLI_PATH;
#else
    REQUIRE_MESSAGE(false, "MAGSKIN_CLI_PATH must point at the pipeline binary");
    return nullptr;
#endif
}

RunResult run_cli(const std::string& args) {
    static int invocation = 0;
    const std::string base = std::filesystem::temp_directory_path() /
                             ("magskin-cliio-" + std::to_string(::getpid()) + "-" +
                              std::to_string(invocation++));
    const std::string out = base + ".out";
    const std::string err = base + ".err";
    const std::string cmd =
        std::string(cli_path()) + " " + args + " >" + out + " 2>" + err;
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_text(out);
    r.err = read_text(err);
    std::filesystem::remove(out);
    std::filesystem::remove(err);
    return r;
}

// 4x4 contact grid, two depths, two repeats: 64 samples, seconds to train.
std::string small_scene(const std::string& dir) {
    return "--out " + dir +
           " --set traj.count_x=4 traj.count_y=4 traj.pitch_mm=20"
           " traj.depths_mm=2,4 traj.repeats=2";
}

bool same_bytes(const std::string& a, const std::string& b) {
    return read_text(a) == read_text(b);
}

} // namespace

TEST_CASE("usage errors exit with the configuration status") {
    CHECK(run_cli("").code == 2);
    CHECK(run_cli("frobnicate").code == 2);
    CHECK(run_cli("gen-data --bogus-flag").code == 2);

    const RunResult bad_set = run_cli("gen-data --set nope.key=1");
    CHECK(bad_set.code == 2);
    CHECK(bad_set.err.find("config error:") != std::string::npos);
    CHECK(bad_set.err.find("nope.key") != std::string::npos);

    CHECK(run_cli("gen-data --set keyvalue").code == 2);
    CHECK(run_cli("gen-data --config /no/such/file.cfg").code == 2);
}

TEST_CASE("the full pipeline runs end to end from the command line") {
    TempDir dir;
    const std::string scene = small_scene(dir.path.string());

    // Dataset generation reports its sample count and provenance digest.
    const RunResult gen = run_cli("gen-data " + scene);
    CAPTURE(gen.err);
    REQUIRE(gen.code == 0);
    CHECK(gen.out.find("samples=64 digest=") != std::string::npos);
    CHECK(gen.out.find("path=" + dir.file("dataset.csv")) != std::string::npos);
    REQUIRE(std::filesystem::exists(dir.file("dataset.csv")));

    // The digest on stdout is the one embedded in the file.
    const std::string digest = gen.out.substr(gen.out.find("digest=") + 7, 16);
    std::ifstream ds(dir.file("dataset.csv"));
    std::string line;
    std::getline(ds, line);
    std::getline(ds, line);
    CHECK(line == digest);

    // Two epochs of real training on the 51/13 random split.
    const RunResult tr =
        run_cli("train " + scene + " --set train.epochs=2 train.batch_size=32");
    CAPTURE(tr.err);
    REQUIRE(tr.code == 0);
    CHECK(tr.out.find("epochs=2 best_epoch=") != std::string::npos);
    CHECK(tr.err.find("train 51 samples, validate 13") != std::string::npos);
    CHECK(tr.err.find("epoch 1/2") != std::string::npos);
    CHECK(tr.err.find("epoch 2/2") != std::string::npos);
    REQUIRE(std::filesystem::exists(dir.file("model.ckpt")));
    REQUIRE(std::filesystem::exists(dir.file("history.csv")));

    // History leads with the config digest and seed that produced it.
    std::ifstream hist(dir.file("history.csv"));
    std::getline(hist, line);
    CHECK(line.rfind("# config ", 0) == 0);
    CHECK(line.find(" seed 42") != std::string::npos);
    std::getline(hist, line);
    CHECK(line == "epoch,train_loss,val_xy_mean_mm,val_z_mean_mm");

    // Evaluation reads the checkpoint back and writes the error map.
    const RunResult ev = run_cli("eval " + scene);
    CAPTURE(ev.err);
    REQUIRE(ev.code == 0);
    CHECK(ev.out.find("n=13") != std::string::npos);
    CHECK(ev.out.find("xy_mean_mm=") != std::string::npos);
    CHECK(ev.out.find("z_std_mm=") != std::string::npos);
    REQUIRE(std::filesystem::exists(dir.file("error_map.csv")));
    std::ifstream emap(dir.file("error_map.csv"));
    std::getline(emap, line);
    CHECK(line.rfind("# config ", 0) == 0);
    std::getline(emap, line);
    CHECK(line == "x_mm,y_mm,xy_err_mm,z_err_mm");

    // The nearest-sensor baseline shares the split.
    const RunResult bl = run_cli("baseline " + scene);
    REQUIRE(bl.code == 0);
    CHECK(bl.out.find("n=13") != std::string::npos);
    CHECK(bl.out.find("xy_mean_mm=") != std::string::npos);

    // Streaming inference over the replayed dataset, estimates to a file.
    const RunResult inf =
        run_cli("infer " + scene + " --set paths.estimates=est.txt");
    CAPTURE(inf.err);
    REQUIRE(inf.code == 0);
    CHECK(inf.err.find("frames: produced=64 processed=64 dropped=0") != std::string::npos);
    CHECK(inf.err.find("latency_ms: p50=") != std::string::npos);
    std::istringstream est(read_text(dir.file("est.txt")));
    std::size_t lines = 0;
    while (std::getline(est, line)) {
        ++lines;
        int flag = -1;
        double t, x, y, z, lat;
        REQUIRE(std::sscanf(line.c_str(), "%lf %lf %lf %lf %d %lf", &t, &x, &y, &z, &flag,
                            &lat) == 6);
        CHECK((flag == 0 || flag == 1));
    }
    CHECK(lines == 64);

    // Estimates go to stdout when no file is named; summary stays on stderr.
    const RunResult inf2 = run_cli("infer " + scene);
    REQUIRE(inf2.code == 0);
    std::istringstream est2(inf2.out);
    lines = 0;
    while (std::getline(est2, line)) ++lines;
    CHECK(lines == 64);
    CHECK(inf2.out.find("frames:") == std::string::npos);
    CHECK(inf2.err.find("frames: produced=64") != std::string::npos);
}

TEST_CASE("generation and training are reproducible run to run") {
    TempDir a, b, c;

    REQUIRE(run_cli("gen-data " + small_scene(a.path.string())).code == 0);
    REQUIRE(run_cli("gen-data " + small_scene(b.path.string())).code == 0);
    CHECK(same_bytes(a.file("dataset.csv"), b.file("dataset.csv")));

    // A different run seed produces different sensor noise.
    REQUIRE(run_cli("gen-data " + small_scene(c.path.string()) + " --seed 7").code == 0);
    CHECK_FALSE(same_bytes(a.file("dataset.csv"), c.file("dataset.csv")));

    const std::string tr_args = " --set train.epochs=1 train.batch_size=32";
    REQUIRE(run_cli("train " + small_scene(a.path.string()) + tr_args).code == 0);
    REQUIRE(run_cli("train " + small_scene(b.path.string()) + tr_args).code == 0);
    CHECK(same_bytes(a.file("model.ckpt"), b.file("model.ckpt")));
    CHECK(same_bytes(a.file("history.csv"), b.file("history.csv")));
}

TEST_CASE("missing and corrupt inputs map to distinct exit codes") {
    TempDir dir;
    const std::string scene = small_scene(dir.path.string());

    // No dataset yet: unreadable input file, configuration status.
    CHECK(run_cli("train " + scene).code == 2);
    CHECK(run_cli("eval " + scene).code == 2);

    REQUIRE(run_cli("gen-data " + scene).code == 0);

    // Dataset exists but no checkpoint.
    CHECK(run_cli("eval " + scene).code == 2);

    // A corrupt checkpoint is a data problem, not a configuration problem.
    std::ofstream(dir.file("model.ckpt"), std::ios::binary) << "not a checkpoint";
    const RunResult ev = run_cli("eval " + scene);
    CHECK(ev.code == 1);
    CHECK(ev.err.find("error:") != std::string::npos);

    // Same for a truncated dataset file.
    std::ofstream(dir.file("dataset.csv"), std::ios::binary) << "magskin-dataset v1\n";
    const RunResult tr = run_cli("train " + scene + " --set train.epochs=1");
    CHECK(tr.code == 1);
    CHECK(tr.err.find("line 2") != std::string::npos);
}

TEST_CASE("overrides win over config files and the seed flag wins over both") {
    TempDir dir;
    const std::string cfg_path = dir.file("run.cfg");
    std::ofstream(cfg_path) << "run.seed = 5\n"
                               "traj.count_x = 4\n"
                               "traj.count_y = 4\n"
                               "traj.pitch_mm = 20\n"
                               "traj.depths_mm = 2,4\n"
                               "traj.repeats = 2\n";

    // --set overrides the file: 3x4 grid instead of 4x4.
    const RunResult gen = run_cli("gen-data --config " + cfg_path + " --out " +
                                  dir.path.string() + " --set traj.count_x=3");
    REQUIRE(gen.code == 0);
    CHECK(gen.out.find("samples=48 ") != std::string::npos);

    // --seed replaces the file's run seed: bytes match a plain --seed 7 run.
    TempDir ref;
    REQUIRE(run_cli("gen-data --config " + cfg_path + " --out " + dir.path.string() +
                    " --seed 7")
                .code == 0);
    REQUIRE(run_cli("gen-data " + small_scene(ref.path.string()) + " --seed 7").code == 0);
    CHECK(same_bytes(dir.file("dataset.csv"), ref.file("dataset.csv")));
}

TEST_CASE("gradient check subcommand reports and returns its verdict") {
    const RunResult gc = run_cli("gradcheck --seeds 2 --seed 11");
    CHECK(gc.code == 0);
    CHECK(gc.out.find("seeds=2 ") != std::string::npos);
    CHECK(gc.out.find("failures=0") != std::string::npos);
    CHECK(gc.out.find("max_rel_err=") != std::string::npos);
}
