#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "imbal/hashing.hpp"
#include "imbal_cli/cli.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  int code = 0;
  std::string out, err;
};

Outcome cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = imbal::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path root() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "imbal_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string p(const std::string& rel) { return (root() / rel).string(); }

void write(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

std::string read(const std::string& path) { return imbal::read_file(path); }

/// Six days of data shared by the train / run / report cases.
const std::string& data_dir() {
  static const std::string dir = [] {
    const Outcome o = cli({"generate", "--out", p("data"), "--seed", "3", "--days", "6"});
    REQUIRE(o.code == 0);
    return p("data");
  }();
  return dir;
}

const std::string& train_config() {
  static const std::string path = [] {
    write(p("train.json"), R"({"epochs": 4, "learning_rate": 0.001, "perturbation_mw": [0, 1, 10]})");
    return p("train.json");
  }();
  return path;
}

const std::string& models_dir() {
  static const std::string dir = [] {
    const Outcome o = cli({"train", "--data", data_dir(), "--config", train_config(), "--desk", "--seed", "1,2",
                           "--out", p("models")});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    return p("models");
  }();
  return dir;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("generate is byte-identical per seed and writes a manifest") {
    REQUIRE(cli({"generate", "--out", p("g1"), "--seed", "9", "--days", "2"}).code == 0);
    REQUIRE(cli({"generate", "--out", p("g2"), "--seed", "9", "--days", "2"}).code == 0);
    for (const char* f : {"si.csv", "merit_orders.csv", "manifest.json"})
      CHECK(read(p("g1/") + f) == read(p("g2/") + f));
    const json m = json::parse(read(p("g1/manifest.json")));
    CHECK(m["command"] == "generate");
    CHECK(m["seeds"] == json::array({9}));
    CHECK(m["outputs"]["si.csv"] == imbal::git_blob_hash_file(p("g1/si.csv")));
    CHECK(m["config_hash"].get<std::string>().size() == 40);
    REQUIRE(cli({"generate", "--out", p("g3"), "--seed", "10", "--days", "2"}).code == 0);
    CHECK(read(p("g1/si.csv")) != read(p("g3/si.csv")));
  }

  TEST_CASE("invalid or unknown config fields are usage errors naming the field") {
    write(p("bad.json"), R"({"days": 2, "si_jump_rate_per_min": 3.0})");
    Outcome o = cli({"generate", "--config", p("bad.json"), "--out", p("bad")});
    CHECK(o.code == imbal::cli::kExitUsage);
    CHECK(o.err.find("si_jump_rate_per_min") != std::string::npos);
    write(p("unknown.json"), R"({"days": 2, "power_max": 3.0})");
    o = cli({"generate", "--config", p("unknown.json"), "--out", p("bad")});
    CHECK(o.code == imbal::cli::kExitUsage);
    CHECK(o.err.find("power_max") != std::string::npos);
    write(p("type.json"), R"({"days": "two"})");
    o = cli({"generate", "--config", p("type.json"), "--out", p("bad")});
    CHECK(o.code == imbal::cli::kExitUsage);
    CHECK(o.err.find("days") != std::string::npos);
    CHECK(cli({"generate"}).code == imbal::cli::kExitUsage);
    CHECK(cli({"frobnicate"}).code == imbal::cli::kExitUsage);
  }

  TEST_CASE("relative outputs resolve under IMBAL_OUT_ROOT") {
    ::setenv("IMBAL_OUT_ROOT", root().c_str(), 1);
    const Outcome o = cli({"generate", "--out", "rooted", "--days", "1"});
    ::unsetenv("IMBAL_OUT_ROOT");
    CHECK(o.code == 0);
    CHECK(fs::exists(root() / "rooted" / "si.csv"));
  }

  TEST_CASE("train writes checkpoints, curves and a manifest; seeds differ") {
    const std::string dir = models_dir();
    for (const char* f : {"model_seed1.ckpt", "model_seed2.ckpt", "curve_seed1.csv", "curve_seed2.csv", "manifest.json"})
      CHECK(fs::exists(dir + "/" + f));
    CHECK(imbal::git_blob_hash_file(dir + "/model_seed1.ckpt") != imbal::git_blob_hash_file(dir + "/model_seed2.ckpt"));
    // Curve: header plus one row per epoch; best validation beats epoch 1.
    std::istringstream curve(read(dir + "/curve_seed1.csv"));
    std::string line;
    std::getline(curve, line);
    CHECK(line == "epoch,train_l1_eur_mwh,validation_l1_eur_mwh");
    std::vector<double> val;
    while (std::getline(curve, line)) val.push_back(std::stod(line.substr(line.rfind(',') + 1)));
    REQUIRE(val.size() == 4);
    CHECK(*std::min_element(val.begin(), val.end()) < val.front());
    const json m = json::parse(read(dir + "/manifest.json"));
    CHECK(m["inputs"].contains("si.csv"));
    CHECK(m["inputs"].contains("train.json"));
    CHECK(m["config"]["preset"] == "desk");
  }

  TEST_CASE("train reruns are byte-identical") {
    const Outcome o = cli({"train", "--data", data_dir(), "--config", train_config(), "--desk", "--seed", "1",
                           "--epochs", "4", "--out", p("models_again")});
    REQUIRE(o.code == 0);
    CHECK(read(p("models_again/model_seed1.ckpt")) == read(models_dir() + "/model_seed1.ckpt"));
    CHECK(read(p("models_again/curve_seed1.csv")) == read(models_dir() + "/curve_seed1.csv"));
  }

  TEST_CASE("non-finite training exits nonzero") {
    write(p("diverge.json"), R"({"epochs": 2, "learning_rate": 1e300, "perturbation_mw": [0, 10]})");
    const Outcome o = cli({"train", "--data", data_dir(), "--config", p("diverge.json"), "--desk", "--out", p("div")});
    CHECK(o.code == imbal::cli::kExitDiverged);
  }

  TEST_CASE("run: clearing needs no checkpoint, icnn requires one") {
    Outcome o = cli({"run", "--data", data_dir(), "--method", "clearing", "--seed", "1", "--out", p("run_clear")});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    CHECK(fs::exists(p("run_clear/episode_seed1.csv")));
    o = cli({"run", "--data", data_dir(), "--method", "icnn", "--out", p("run_none")});
    CHECK(o.code == imbal::cli::kExitUsage);
    CHECK(o.err.find("checkpoint") != std::string::npos);
    o = cli({"run", "--data", data_dir(), "--method", "icnn", "--checkpoint", p("missing.ckpt"), "--out", p("run_none")});
    CHECK(o.code == imbal::cli::kExitUsage);
    CHECK(o.err.find("missing.ckpt") != std::string::npos);
  }

  TEST_CASE("run: horizons other than 1 and 4 need the override") {
    Outcome o = cli({"run", "--data", data_dir(), "--horizon", "3", "--out", p("run_h3")});
    CHECK(o.code == imbal::cli::kExitUsage);
    CHECK(o.err.find("allow-any-horizon") != std::string::npos);
    o = cli({"run", "--data", data_dir(), "--horizon", "3", "--allow-any-horizon", "--out", p("run_h3")});
    CHECK(o.code == 0);
    CHECK(cli({"run", "--data", data_dir(), "--horizon", "1", "--out", p("run_h1")}).code == 0);
    CHECK(cli({"run", "--data", data_dir(), "--battery", "7mw", "--out", p("run_bad")}).code == imbal::cli::kExitUsage);
  }

  TEST_CASE("run: custom batteries come from the config") {
    write(p("custom.json"), R"({"power_max_mw": 5, "energy_max_mwh": 20, "initial_soc": 0.2})");
    Outcome o = cli({"run", "--data", data_dir(), "--battery", "custom", "--config", p("custom.json"), "--out", p("run_custom")});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    const json run = json::parse(read(p("run_custom/run.json")));
    CHECK(run["battery_spec"]["power_max_mw"] == 5.0);
    o = cli({"run", "--data", data_dir(), "--battery", "10mw", "--config", p("custom.json"), "--out", p("run_custom2")});
    CHECK(o.code == imbal::cli::kExitUsage);
  }

  TEST_CASE("run: icnn episodes are deterministic per seed") {
    const std::vector<std::string> base{"run", "--data", data_dir(), "--method", "icnn", "--models", models_dir(),
                                        "--forecast", "gaussian", "--seed", "1,2", "--battery", "10mw"};
    auto a = base, b = base;
    a.insert(a.end(), {"--out", p("run_icnn_a")});
    b.insert(b.end(), {"--out", p("run_icnn_b"), "--jobs", "1"});
    REQUIRE(cli(a).code == 0);
    REQUIRE(cli(b).code == 0);
    for (const char* f : {"episode_seed1.csv", "episode_seed2.csv", "run.json", "manifest.json"})
      CHECK(read(p("run_icnn_a/") + f) == read(p("run_icnn_b/") + f));
    CHECK(read(p("run_icnn_a/episode_seed1.csv")) != read(p("run_icnn_a/episode_seed2.csv")));
  }

  TEST_CASE("report: single row, seed statistics, grouped batteries") {
    REQUIRE(cli({"run", "--data", data_dir(), "--seed", "1", "--out", p("rep_one")}).code == 0);
    Outcome o = cli({"report", p("rep_one"), "--out", p("report_one")});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    std::istringstream csv(read(p("report_one/report.csv")));
    std::string line;
    int rows = -1;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 1);

    REQUIRE(cli({"run", "--data", data_dir(), "--forecast", "gaussian", "--seed", "1,2,3", "--out", p("rep_three")}).code == 0);
    REQUIRE(cli({"run", "--data", data_dir(), "--battery", "50mw", "--seed", "1", "--out", p("rep_big")}).code == 0);
    o = cli({"report", p("rep_one"), p("rep_three"), p("rep_big"), "--out", p("report_mix")});
    REQUIRE(o.code == 0);
    CHECK(o.out.find("== battery 1mw ==") != std::string::npos);
    CHECK(o.out.find("== battery 50mw ==") != std::string::npos);
    CHECK(o.out.find("±") != std::string::npos);
    const std::string report = read(p("report_mix/report.csv"));
    CHECK(report.find("1mw,clearing,4,gaussian,3,") != std::string::npos);
    CHECK(fs::exists(p("report_mix/rmse_by_bin.csv")));
    CHECK(cli({"report", p("nowhere")}).code == imbal::cli::kExitUsage);
  }

  TEST_CASE("generate: a default year within the time budget") {
    const auto t0 = std::chrono::steady_clock::now();
    const Outcome o = cli({"generate", "--out", p("year")});
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    REQUIRE(o.code == 0);
    MESSAGE("one synthetic year in " << s << " s");
    CHECK(s < 60.0);
    fs::remove_all(p("year"));
  }
}
