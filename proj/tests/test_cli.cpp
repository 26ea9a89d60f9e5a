// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <nsad/nsad.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / "nsad-cli-test";
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct CliResult {
  int rc = -1;
  std::string out, err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult run_cli(const TempDir& tmp, const std::string& args) {
  std::string out_file = tmp / "stdout.txt", err_file = tmp / "stderr.txt";
  std::string cmd =
      std::string("\"") + NSAD_CLI_PATH + "\" " + args + " >" + out_file + " 2>" + err_file;
  int status = std::system(cmd.c_str());
  CliResult r;
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

// Config handle that cleans itself up and swallows the set/create plumbing.
struct Config {
  nsad_config* h = nsad_config_create();
  ~Config() { nsad_config_destroy(h); }
  Config& set(const std::string& k, const std::string& v) {
    REQUIRE(nsad_config_set(h, k.c_str(), v.c_str()) == 0);
    return *this;
  }
};

void set_tiny_data(Config& cfg) {
  cfg.set("network", "mini1").set("train_count", "8").set("test_count", "8").set("batch", "4");
}

json read_json(const std::string& path) {
  json j = json::parse(slurp(path), nullptr, /*allow_exceptions=*/false);
  REQUIRE_FALSE(j.is_discarded());
  return j;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("library exposes version and subcommands") {
    std::string v = nsad_version();
    CHECK_FALSE(v.empty());
    CHECK(v.find('.') != std::string::npos);
    REQUIRE(nsad_subcommand_count() == 7);
    std::vector<std::string> names;
    for (size_t i = 0; i < nsad_subcommand_count(); ++i) names.push_back(nsad_subcommand_name(i));
    for (const char* expect : {"zero-table", "variation-hist", "thresholds", "zone-volume",
                               "train", "weight-divergence", "beta-sweep"})
      CHECK(std::find(names.begin(), names.end(), expect) != names.end());
    CHECK(nsad_subcommand_name(nsad_subcommand_count()) == nullptr);
  }

  TEST_CASE("margins are reachable through the c api") {
    double v = 0;
    REQUIRE(nsad_hoeffding_margin(0.05, 1000, &v) == 0);
    CHECK(v == doctest::Approx(std::sqrt(std::log(40.0) / 2000.0)).epsilon(1e-12));
    REQUIRE(nsad_mcdiarmid_margin(0.05, 1000, 16, &v) == 0);
    CHECK(v == doctest::Approx(std::sqrt(0.5 * (1.0 / 1000 + 1.0 / 16) * std::log(40.0)))
                   .epsilon(1e-12));
    CHECK(nsad_hoeffding_margin(2.0, 1000, &v) == 2);
    CHECK(std::string(nsad_last_error()).find("alpha") != std::string::npos);
    CHECK(nsad_hoeffding_margin(0.05, 1000, nullptr) == 2);
  }

  TEST_CASE("zero table entries are reachable through the c api") {
    const double x[4] = {1, 2, 3, 4};
    double value = 1, deriv = 1;
    REQUIRE(nsad_zero_table_entry(32, "max-pair", x, 4, 0.0, &value, &deriv) == 0);
    CHECK(value == 0.0);
    CHECK(deriv == -1.5);
    REQUIRE(nsad_zero_table_entry(32, "max-pair", x, 4, 10.0, &value, &deriv) == 0);
    CHECK(value == 0.0);
    CHECK(deriv == 0.0);
    REQUIRE(nsad_zero_table_entry(32, "relu-built", x, 4, 0.0, &value, &deriv) == 0);
    CHECK(value == 0.0);
    CHECK(deriv == 1.5);
    CHECK(nsad_zero_table_entry(32, "max-pairs", x, 4, 0.0, &value, &deriv) == 2);
    CHECK(std::string(nsad_last_error()).find("max-pair") != std::string::npos);
    CHECK(nsad_zero_table_entry(32, "max-pair", nullptr, 0, 0.0, &value, &deriv) == 2);
    CHECK(nsad_zero_table_entry(33, "max-pair", x, 4, 0.0, &value, &deriv) == 2);
  }

  TEST_CASE("config objects reject malformed input") {
    Config cfg;
    CHECK(nsad_config_set(nullptr, "a", "b") == 2);
    CHECK(nsad_config_set(cfg.h, nullptr, "b") == 2);
    CHECK(nsad_config_load_file(cfg.h, "/nonexistent/nsad.cfg") == 2);
    CHECK(std::string(nsad_last_error()).find("cannot open") != std::string::npos);

    TempDir tmp;
    std::ofstream(tmp / "bad.cfg") << "seed=1\nnot a key value pair\n";
    CHECK(nsad_config_load_file(cfg.h, (tmp / "bad.cfg").c_str()) == 2);
    CHECK(std::string(nsad_last_error()).find("line 2") != std::string::npos);

    std::ofstream(tmp / "noconf.json") << "{\"outputs\": []}\n";
    CHECK(nsad_config_load_file(cfg.h, (tmp / "noconf.json").c_str()) == 2);
    CHECK(std::string(nsad_last_error()).find("config object") != std::string::npos);

    CHECK(nsad_run("frobnicate", cfg.h) == 2);
    CHECK(std::string(nsad_last_error()).find("zone-volume") != std::string::npos);
    CHECK(nsad_run(nullptr, cfg.h) == 2);
  }

  TEST_CASE("unknown config keys name the valid set") {
    TempDir tmp;
    Config cfg;
    cfg.set("out", tmp / "zt").set("bogus_key", "1");
    CHECK(nsad_run("zero-table", cfg.h) == 2);
    std::string msg = nsad_last_error();
    CHECK(msg.find("bogus_key") != std::string::npos);
    CHECK(msg.find("variant") != std::string::npos);
  }

  TEST_CASE("a missing idx directory is a data error with instructions") {
    TempDir tmp;
    Config cfg;
    set_tiny_data(cfg);
    cfg.set("data", "idx").set("data_dir", tmp / "empty").set("out", tmp / "vh");
    fs::create_directories(tmp.path / "empty");
    CHECK(nsad_run("variation-hist", cfg.h) == 3);
    std::string msg = nsad_last_error();
    CHECK(msg.find("train-images-idx3-ubyte") != std::string::npos);
    CHECK(msg.find("download") != std::string::npos);
  }

  TEST_CASE("the pipeline runs end to end through the c api") {
    TempDir tmp;

    Config zt;
    zt.set("x", "1,2,3,4").set("ts", "0,10").set("out", tmp / "zt");
    REQUIRE(nsad_run("zero-table", zt.h) == 0);
    CHECK(fs::exists(tmp.path / "zt" / "zero_table.csv"));

    Config th;
    set_tiny_data(th);
    th.set("draws", "2").set("out", tmp / "th");
    REQUIRE(nsad_run("thresholds", th.h) == 0);
    json tj = read_json(tmp / "th/thresholds.json");
    REQUIRE(tj.contains("tau1"));
    CHECK(tj["tau1"].get<double>() >= 0.0);

    Config zv;
    set_tiny_data(zv);
    zv.set("draws", "2").set("tau_source", "explicit").set("tau", tj["tau1"].dump());
    zv.set("out", tmp / "zv");
    REQUIRE(nsad_run("zone-volume", zv.h) == 0);
    json vj = read_json(tmp / "zv/volume.json");
    CHECK(vj["draws"].get<size_t>() == 2);
    CHECK(vj["batches"].get<size_t>() == 2);
    double p1 = vj["prop_theta_in_s"].get<double>();
    double p2 = vj["prop_batches_impacted"].get<double>();
    CHECK(p1 >= 0.0);
    CHECK(p1 <= 1.0);
    CHECK(p2 <= p1);
    double margin = 0;
    nsad_hoeffding_margin(vj["alpha"].get<double>(), 2, &margin);
    CHECK(vj["hoeffding_margin"].get<double>() == margin);
    CHECK(fs::exists(tmp.path / "zv" / "records.csv"));

    Config tr;
    set_tiny_data(tr);
    tr.set("epochs", "1").set("gamma", "0.05").set("out", tmp / "tr");
    REQUIRE(nsad_run("train", tr.h) == 0);
    std::string trace = slurp(tmp / "tr/trace.csv");
    CHECK(trace.rfind("epoch,train_loss,test_accuracy", 0) == 0);
    CHECK(std::count(trace.begin(), trace.end(), '\n') == 2);  // header + one epoch
  }

  TEST_CASE("the binary parses flags and writes the zero table") {
    TempDir tmp;
    CliResult r = run_cli(tmp, "zero-table --x 1,2,3,4 --ts 0,10 --precision 32 --out " +
                                   (tmp / "zt"));
    REQUIRE(r.rc == 0);
    CHECK(r.out.find("zero'(t)") != std::string::npos);

    std::string csv = slurp(tmp / "zt/zero_table.csv");
    CHECK(csv.rfind("variant,precision,t,value,derivative", 0) == 0);
    CHECK(csv.find("max-pair,b32,0,0,-1.5") != std::string::npos);
    CHECK(csv.find("max-pair,b32,10,0,0") != std::string::npos);

    json man = read_json(tmp / "zt/manifest.json");
    CHECK(man["subcommand"] == "zero-table");
    CHECK(man["config"]["x"] == "1,2,3,4");
    CHECK(man["config"]["precision"] == "32");
    std::vector<std::string> outputs = man["outputs"];
    CHECK(std::find(outputs.begin(), outputs.end(), "zero_table.csv") != outputs.end());
  }

  TEST_CASE("the binary reports usage errors as config failures") {
    TempDir tmp;
    CHECK(run_cli(tmp, "frobnicate").rc == 2);
    CHECK(run_cli(tmp, "zero-table --precision 48").rc == 2);
    CliResult r = run_cli(tmp, "zero-table --set bogus 1");
    CHECK(r.rc == 2);
    r = run_cli(tmp, "zero-table --set bogus_key=1 --out " + (tmp / "zt"));
    CHECK(r.rc == 2);
    CHECK(r.err.find("bogus_key") != std::string::npos);
    CHECK(run_cli(tmp, "--version").rc == 0);
    CHECK(run_cli(tmp, "--help").rc == 0);
  }

  TEST_CASE("config files feed flags and flags win") {
    TempDir tmp;
    std::ofstream(tmp / "run.cfg") << "# tiny run\nx = 1,2,3,4\nts = 0\nprecision = 32\n";
    CliResult r = run_cli(tmp, "zero-table --config " + (tmp / "run.cfg") + " --ts 10 --out " +
                                   (tmp / "zt"));
    REQUIRE(r.rc == 0);
    json man = read_json(tmp / "zt/manifest.json");
    CHECK(man["config"]["x"] == "1,2,3,4");  // from the file
    CHECK(man["config"]["ts"] == "10");      // flag overrides the file
  }

  TEST_CASE("a manifest reproduces its run bitwise") {
    TempDir tmp;
    std::string common =
        "variation-hist --network mini1 --draws 2 --batch 4 "
        "--set train_count=8 --set test_count=8 --seed 11";
    CliResult first = run_cli(tmp, common + " --out " + (tmp / "a"));
    REQUIRE(first.rc == 0);
    CliResult second = run_cli(tmp, "variation-hist --config " + (tmp / "a/manifest.json") +
                                        " --out " + (tmp / "b"));
    REQUIRE(second.rc == 0);
    std::string ra = slurp(tmp / "a/records.csv"), rb = slurp(tmp / "b/records.csv");
    CHECK_FALSE(ra.empty());
    CHECK(ra == rb);
    CHECK(slurp(tmp / "a/hist.json") == slurp(tmp / "b/hist.json"));
  }

  TEST_CASE("diverging training exits 4 and keeps its artifacts") {
    TempDir tmp;
    CliResult r = run_cli(tmp,
                          "train --network mini1 --gamma 1e6 --epochs 2 --batch 4 "
                          "--set train_count=8 --set test_count=8 --out " +
                              (tmp / "tr"));
    CHECK(r.rc == 4);
    CHECK(r.err.find("diverged") != std::string::npos);
    CHECK(fs::exists(tmp.path / "tr" / "trace.csv"));
    json man = read_json(tmp / "tr/manifest.json");
    CHECK(man["diverged"].get<bool>());
  }
}
