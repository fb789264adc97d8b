#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cvgan/image_io.hpp"
#include "cvgan/latent.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using namespace cvgan;

namespace {

std::string bin() {
    const char* b = std::getenv("CVGAN_BIN");
    REQUIRE(b != nullptr);
    return b;
}

int run(const std::string& args) {
    std::string cmd = bin() + " " + args + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("cvgan_cli_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string s(const std::string& sub = "") const { return (path / sub).string(); }
};

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

}  // namespace

TEST_CASE("cli: usage errors exit 1") {
    CHECK(run("") == 1);
    CHECK(run("degrade") == 1);                        // missing --out
    CHECK(run("degrade --out /tmp/x") == 1);           // neither --synthetic nor --in
    CHECK(run("nonsense") == 1);
}

TEST_CASE("cli degrade: synthetic pairs, deterministic per seed, bluish dominance") {
    TempDir tmp("degrade");
    CHECK(run("degrade --synthetic 6 --preset bluish --seed 7 --size 24 --out " + tmp.s("a")) == 0);
    int count = 0;
    for (auto& e : fs::directory_iterator(tmp.s("a") + "/clean")) (void)e, ++count;
    CHECK(count == 6);

    CHECK(run("degrade --synthetic 6 --preset bluish --seed 7 --size 24 --out " + tmp.s("b")) == 0);
    for (int i = 0; i < 6; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "degraded/pair_%05d.png", i);
        CHECK(read_bytes(tmp.path / "a" / name) == read_bytes(tmp.path / "b" / name));
    }

    double blue = 0, red = 0;
    for (int i = 0; i < 6; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "pair_%05d.png", i);
        Image img = read_png((tmp.path / "a" / "degraded" / name).string());
        blue += img.channel_mean(2);
        red += img.channel_mean(0);
    }
    CHECK(blue >= red);
}

TEST_CASE("cli train/enhance/compress/decompress/evaluate/gradcheck round trip") {
    TempDir tmp("full");

    // data
    REQUIRE(run("degrade --synthetic 8 --preset bluish --seed 3 --size 32 --out " + tmp.s("data")) == 0);

    // config file with an override: flags win
    {
        std::ofstream cfg(tmp.s("run.cfg"));
        cfg << "preset=desk\nsteps=2\nbatch_size=2\nseed=5\n";
        cfg << "data_dir=" << tmp.s("data") << "\n";
    }
    REQUIRE(run("train --config " + tmp.s("run.cfg") + " --steps 3 --out " + tmp.s("run")) == 0);
    auto hist = read_lines(tmp.path / "run" / "history.csv");
    REQUIRE(hist.size() == 4);  // header + 3 steps (flag overrode steps=2)
    CHECK(hist[0] == "step,rec,gan_g,gan_d,gdl,lambda,total");
    CHECK(fs::exists(tmp.path / "run" / "ckpt_final.bin"));

    std::string ckpt = (tmp.path / "run" / "ckpt_final.bin").string();

    // enhance
    REQUIRE(run("enhance --ckpt " + ckpt + " --preset desk --in " + tmp.s("data") + "/degraded --out " +
                tmp.s("enhanced")) == 0);
    CHECK(fs::exists(tmp.path / "enhanced" / "pair_00000.png"));

    // compress -> decompress == enhance (bitwise on the written images)
    std::string img0 = tmp.s("data") + "/degraded/pair_00000.png";
    REQUIRE(run("compress --ckpt " + ckpt + " --preset desk --img " + img0 + " --out " + tmp.s("z.lat")) == 0);
    LatentCode code = load_latent(tmp.s("z.lat"));
    CHECK(code.shape == Shape{16, 8, 8});
    REQUIRE(run("decompress --ckpt " + ckpt + " --preset desk --latent " + tmp.s("z.lat") + " --out " +
                tmp.s("roundtrip.png")) == 0);
    CHECK(read_bytes(tmp.path / "roundtrip.png") == read_bytes(tmp.path / "enhanced" / "pair_00000.png"));

    // idempotence of enhance (same inputs, same bytes)
    REQUIRE(run("enhance --ckpt " + ckpt + " --preset desk --in " + tmp.s("data") + "/degraded --out " +
                tmp.s("enhanced2")) == 0);
    CHECK(read_bytes(tmp.path / "enhanced" / "pair_00003.png") ==
          read_bytes(tmp.path / "enhanced2" / "pair_00003.png"));

    // evaluate identical pairs: psnr inf, edge 0
    fs::create_directories(tmp.s("same/degraded"));
    fs::create_directories(tmp.s("same/clean"));
    fs::copy(tmp.s("data") + "/clean/pair_00000.png", tmp.s("same/degraded/pair_00000.png"));
    fs::copy(tmp.s("data") + "/clean/pair_00000.png", tmp.s("same/clean/pair_00000.png"));
    REQUIRE(run("evaluate --pairs " + tmp.s("same") + " --metrics psnr,uciqe,uiqm,edge --out " +
                tmp.s("report")) == 0);
    auto kv = read_lines(tmp.path / "report" / "report.kv");
    REQUIRE(kv.size() == 1);
    CHECK(kv[0].find("psnr=inf") != std::string::npos);
    CHECK(kv[0].find("edge_l2=0.0000") != std::string::npos);

    // evaluate without references: psnr/edge unavailable
    REQUIRE(run("evaluate --images " + tmp.s("enhanced") + " --metrics psnr,uciqe,uiqm,edge --out " +
                tmp.s("report2")) == 0);
    auto kv2 = read_lines(tmp.path / "report2" / "report.kv");
    CHECK(kv2.at(0).find("psnr=n/a") != std::string::npos);
    CHECK(kv2.at(0).find("uiqm=") != std::string::npos);

    // config errors
    {
        std::ofstream cfg(tmp.s("bad.cfg"));
        cfg << "not_a_key=1\n";
    }
    CHECK(run("train --config " + tmp.s("bad.cfg")) == 1);

    // data errors exit 2
    CHECK(run("enhance --ckpt " + tmp.s("missing.bin") + " --preset desk --in " + tmp.s("data") +
              "/degraded --out " + tmp.s("x")) == 2);
    {
        std::ofstream corrupt(tmp.s("corrupt.bin"), std::ios::binary);
        corrupt << "garbage";
    }
    CHECK(run("enhance --ckpt " + tmp.s("corrupt.bin") + " --preset desk --in " + tmp.s("data") +
              "/degraded --out " + tmp.s("x")) == 2);
    // checkpoint/preset mismatch
    CHECK(run("enhance --ckpt " + ckpt + " --preset micro --in " + tmp.s("data") + "/degraded --out " +
              tmp.s("x")) == 1);
}

TEST_CASE("cli gradcheck exits 0 on the micro preset") {
    CHECK(run("gradcheck --preset micro") == 0);
}
