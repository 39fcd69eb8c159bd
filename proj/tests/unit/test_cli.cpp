#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "uqsep/config.hpp"

using namespace uqsep;
namespace fs = std::filesystem;

namespace {

const char* cli_path() { return UQSEP_CLI_PATH; }

int run_cli(const std::string& args) {
    const std::string cmd = std::string(cli_path()) + " " + args + " 2>/dev/null";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string capture_stderr(const std::string& args) {
    const fs::path tmp = fs::temp_directory_path() / "uqsep_cli_stderr.txt";
    const std::string cmd = std::string(cli_path()) + " " + args + " 2>" + tmp.string() + " >/dev/null";
    [[maybe_unused]] const int rc = std::system(cmd.c_str());
    std::ifstream in(tmp);
    std::string text((std::istreambuf_iterator<char>(in)), {});
    fs::remove(tmp);
    return text;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    REQUIRE(out);
    out << text;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string tiny_toy_config(int members = 2, const std::string& kind = "eqr",
                            const std::string& extra = "") {
    std::ostringstream ss;
    ss << "[run]\nseed = 7\n\n";
    ss << "[problem]\nname = toy\nn_points = 200\n\n";
    ss << "[surrogate]\nkind = " << kind << "\nmembers = " << members << "\n\n";
    ss << "[network]\nhidden = 8\n\n";
    ss << "[train]\nepochs = 15\nbatch_size = 32\n\n";
    ss << "[separation]\niterations = 2\nactivity_floor = 0\n\n";
    ss << "[grid]\nres_x = 16\nres_y = 16\n";
    ss << extra;
    return ss.str();
}

int count_lines(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in);
    int n = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++n;
    return n;
}

}  // namespace

TEST_CASE("cli generate: toy defaults produce 4000 rows with 2+2+1 columns") {
    const fs::path dir = fresh_dir("uqsep_cli_gen");
    const fs::path cfg = dir / "cfg.ini";
    write_file(cfg, "[run]\nseed = 3\n[problem]\nname = toy\n");
    REQUIRE(run_cli("generate --config " + cfg.string() + " --out " + (dir / "out").string() +
                    " --quiet") == 0);
    const fs::path csv = dir / "out" / "dataset.csv";
    REQUIRE(fs::exists(csv));
    CHECK(count_lines(csv) == 4001);  // header + 4000 rows
    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == "x0,x1,y0,y1,round");
    CHECK(fs::exists(dir / "out" / "regions.txt"));
    CHECK(fs::exists(dir / "out" / "config_echo.ini"));
    fs::remove_all(dir);
}

TEST_CASE("cli generate: same seed gives identical bytes, different seed differs") {
    const fs::path dir = fresh_dir("uqsep_cli_gen_det");
    const fs::path cfg = dir / "cfg.ini";
    write_file(cfg, "[run]\nseed = 11\n[problem]\nname = toy\nn_points = 300\n");
    REQUIRE(run_cli("generate --config " + cfg.string() + " --out " + (dir / "a").string() + " --quiet") == 0);
    REQUIRE(run_cli("generate --config " + cfg.string() + " --out " + (dir / "b").string() + " --quiet") == 0);
    CHECK(slurp(dir / "a" / "dataset.csv") == slurp(dir / "b" / "dataset.csv"));
    REQUIRE(run_cli("generate --config " + cfg.string() + " --seed 12 --out " + (dir / "c").string() +
                    " --quiet") == 0);
    CHECK(slurp(dir / "a" / "dataset.csv") != slurp(dir / "c" / "dataset.csv"));
    fs::remove_all(dir);
}

TEST_CASE("cli: explicit n_points = 0 is a validation error with a line-precise message") {
    const fs::path dir = fresh_dir("uqsep_cli_npoints");
    const fs::path cfg = dir / "cfg.ini";
    write_file(cfg, "[run]\nseed = 1\n[problem]\nname = toy\nn_points = 0\n");
    CHECK(run_cli("generate --config " + cfg.string() + " --out " + (dir / "out").string() + " --quiet") == 1);
    const std::string err = capture_stderr("generate --config " + cfg.string() + " --out " +
                                           (dir / "out").string() + " --quiet");
    CHECK(err.find("cfg.ini:5") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("cli: unknown keys are rejected with the offending line") {
    const fs::path dir = fresh_dir("uqsep_cli_badkey");
    const fs::path cfg = dir / "cfg.ini";
    write_file(cfg, "[run]\nseed = 1\n[problem]\nname = toy\nbogus_key = 5\n");
    CHECK(run_cli("generate --config " + cfg.string() + " --out " + (dir / "out").string() + " --quiet") == 1);
    const std::string err = capture_stderr("generate --config " + cfg.string() + " --out " +
                                           (dir / "out").string() + " --quiet");
    CHECK(err.find(":5") != std::string::npos);
    CHECK(err.find("bogus_key") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("cli: missing config file exits with the io code") {
    CHECK(run_cli("generate --config /nonexistent/cfg.ini --out /tmp/x --quiet") == 2);
}

TEST_CASE("cli train: eqr exports model plus 2 outputs x 2 kinds of maps") {
    const fs::path dir = fresh_dir("uqsep_cli_train");
    const fs::path cfg = dir / "cfg.ini";
    write_file(cfg, tiny_toy_config());
    REQUIRE(run_cli("generate --config " + cfg.string() + " --out " + (dir / "data").string() + " --quiet") == 0);
    REQUIRE(run_cli("train --config " + cfg.string() + " --data " + (dir / "data" / "dataset.csv").string() +
                    " --out " + (dir / "model").string() + " --quiet") == 0);
    CHECK(fs::exists(dir / "model" / "model.bin"));
    int map_files = 0;
    for (const char* name :
         {"map_epistemic_out0.csv", "map_epistemic_out1.csv", "map_aleatoric_out0.csv",
          "map_aleatoric_out1.csv"})
        map_files += fs::exists(dir / "model" / name);
    CHECK(map_files == 4);

    // deterministic re-export: train again into a second directory
    REQUIRE(run_cli("train --config " + cfg.string() + " --data " + (dir / "data" / "dataset.csv").string() +
                    " --out " + (dir / "model2").string() + " --quiet") == 0);
    CHECK(slurp(dir / "model" / "model.bin") == slurp(dir / "model2" / "model.bin"));
    CHECK(slurp(dir / "model" / "map_epistemic_out0.csv") == slurp(dir / "model2" / "map_epistemic_out0.csv"));
    fs::remove_all(dir);
}

TEST_CASE("cli train: mc_dropout aleatoric maps are identically zero") {
    const fs::path dir = fresh_dir("uqsep_cli_mc");
    const fs::path cfg = dir / "cfg.ini";
    write_file(cfg, tiny_toy_config(2, "mc_dropout"));
    REQUIRE(run_cli("generate --config " + cfg.string() + " --out " + (dir / "data").string() + " --quiet") == 0);
    REQUIRE(run_cli("train --config " + cfg.string() + " --data " + (dir / "data" / "dataset.csv").string() +
                    " --out " + (dir / "model").string() + " --quiet") == 0);
    for (const char* name : {"map_aleatoric_out0.csv", "map_aleatoric_out1.csv"}) {
        const auto mat = load_matrix_csv((dir / "model" / name).string());
        for (const auto& row : mat)
            for (double v : row) CHECK(v == 0.0);
    }
    fs::remove_all(dir);
}

TEST_CASE("cli train: malformed csv reports the row and exits with the parse code") {
    const fs::path dir = fresh_dir("uqsep_cli_badcsv");
    const fs::path cfg = dir / "cfg.ini";
    write_file(cfg, tiny_toy_config());
    write_file(dir / "bad.csv", "x0,x1,y0,y1,round\n1,2,3,4,0\noops,2,3,4,0\n");
    CHECK(run_cli("train --config " + cfg.string() + " --data " + (dir / "bad.csv").string() + " --out " +
                  (dir / "m").string() + " --quiet") == 3);
    const std::string err = capture_stderr("train --config " + cfg.string() + " --data " +
                                           (dir / "bad.csv").string() + " --out " + (dir / "m").string());
    CHECK(err.find("row 3") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("cli separate: Q=2 report carries iteration entries 0,1,2 and scores run") {
    const fs::path dir = fresh_dir("uqsep_cli_sep");
    const fs::path cfg = dir / "cfg.ini";
    write_file(cfg, tiny_toy_config());
    REQUIRE(run_cli("separate --config " + cfg.string() + " --out " + (dir / "run").string() + " --quiet") == 0);
    CHECK(fs::exists(dir / "run" / "iter_000" / "mask.pgm"));
    CHECK(fs::exists(dir / "run" / "iter_001" / "mask.pgm"));
    CHECK(fs::exists(dir / "run" / "iter_002" / "mask.pgm"));
    const std::string summary = slurp(dir / "run" / "summary.txt");
    CHECK(summary.find("iterations_recorded 3") != std::string::npos);
    CHECK(summary.find("status completed") != std::string::npos);

    REQUIRE(run_cli("score --run " + (dir / "run").string() + " --quiet") == 0);
    REQUIRE(fs::exists(dir / "run" / "scores.txt"));
    const std::string scores1 = slurp(dir / "run" / "scores.txt");
    CHECK(scores1.find("region 0") != std::string::npos);
    CHECK(scores1.find("coverage q=") != std::string::npos);
    CHECK(scores1.find("crossing_rate") != std::string::npos);

    // scoring is stable across reruns, including the summary splice
    REQUIRE(run_cli("score --run " + (dir / "run").string() + " --quiet") == 0);
    CHECK(slurp(dir / "run" / "scores.txt") == scores1);
    const std::string summary2 = slurp(dir / "run" / "summary.txt");
    CHECK(summary2.find("== scores ==") != std::string::npos);
    REQUIRE(run_cli("score --run " + (dir / "run").string() + " --quiet") == 0);
    CHECK(slurp(dir / "run" / "summary.txt") == summary2);
    fs::remove_all(dir);
}

TEST_CASE("cli separate: early stop is flagged in the summary") {
    const fs::path dir = fresh_dir("uqsep_cli_early");
    const fs::path cfg = dir / "cfg.ini";
    // an absurd activity floor silences every channel at iteration 0
    write_file(cfg,
               "[run]\nseed = 5\n[problem]\nname = toy\nn_points = 200\n"
               "gap_regions = false\nnoise_regions = false\n"
               "[surrogate]\nkind = eqr\nmembers = 2\n[network]\nhidden = 8\n"
               "[train]\nepochs = 10\n[separation]\niterations = 2\nactivity_floor = 100.0\n"
               "[grid]\nres_x = 16\nres_y = 16\n");
    REQUIRE(run_cli("separate --config " + cfg.string() + " --out " + (dir / "run").string() + " --quiet") == 0);
    const std::string summary = slurp(dir / "run" / "summary.txt");
    CHECK(summary.find("status early_stopped") != std::string::npos);
    CHECK(summary.find("final_aleatoric_cells 0") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("cli score: missing manifest is a descriptive io error") {
    const fs::path dir = fresh_dir("uqsep_cli_score_missing");
    CHECK(run_cli("score --run " + dir.string() + " --quiet") == 2);
    const std::string err = capture_stderr("score --run " + dir.string());
    CHECK(err.find("config_echo.ini") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("config parsing: library-level validation") {
    CHECK_THROWS_AS(parse_config_text("[run\nseed=1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("key_without_section = 1\n"), ConfigError);
    CHECK_THROWS_AS(resolve_run_config(parse_config_text("[problem]\nname = nope\n")), ConfigError);
    CHECK_THROWS_AS(resolve_run_config(parse_config_text("[surrogate]\nalpha = 0.7\n")), ConfigError);
    CHECK_THROWS_AS(resolve_run_config(parse_config_text("[train]\nepochs = -3\n")), ConfigError);
    const RunConfig rc = resolve_run_config(parse_config_text("[problem]\nname = robot\n"));
    CHECK(rc.separation.iterations == 4);  // robot default
    CHECK(rc.separation.eqr.train.epochs == 120);
}
