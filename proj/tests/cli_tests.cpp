#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

// End-to-end checks of the spatlda binary: each test shells out to the
// built executable (SPATLDA_CLI_PATH) inside a scratch directory.

#include "spatlda/io.hpp"

#include <cstdlib>
#include <filesystem>
#include <unistd.h>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace spatlda;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run_cli(const std::string& args, const std::string& dir) {
  const std::string log = dir + "/cli_out.txt";
  const std::string cmd =
      std::string(SPATLDA_CLI_PATH) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

long count_lines(const std::string& text) {
  return std::count(text.begin(), text.end(), '\n');
}

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() /
          ("spatlda_test_" + std::to_string(::getpid()) + "_" +
           std::to_string(counter()++));
    fs::create_directories(dir);
  }
  ~Scratch() { std::error_code ec; fs::remove_all(dir, ec); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

}  // namespace

TEST_CASE("simulate writes the documented shapes, deterministically") {
  Scratch tmp;
  const std::string flags = "simulate --u 6 --r 5 --n1 30 --n2 30 --reps 1 --seed 7 --out-dir " +
                            (tmp / "sim");
  const Run first = run_cli(flags, tmp / "");
  REQUIRE(first.code == 0);

  const std::string sites = slurp(tmp / "sim/sites.csv");
  CHECK(count_lines(sites) == 37);  // header + 36 sites
  const std::string train = slurp(tmp / "sim/train_0001.csv");
  CHECK(count_lines(train) == 61);  // header + 60 rows
  const std::string header = train.substr(0, train.find('\n'));
  CHECK(std::count(header.begin(), header.end(), ',') == 36);  // label + 36 features
  const std::string test = slurp(tmp / "sim/test_0001.csv");
  CHECK(count_lines(test) == 201);

  // byte-identical rerun
  const Run second = run_cli(
      "simulate --u 6 --r 5 --n1 30 --n2 30 --reps 1 --seed 7 --out-dir " + (tmp / "sim2"),
      tmp / "");
  REQUIRE(second.code == 0);
  CHECK(slurp(tmp / "sim2/train_0001.csv") == train);
  CHECK(slurp(tmp / "sim2/sites.csv") == sites);
}

TEST_CASE("fit / predict / evaluate round trip") {
  Scratch tmp;
  REQUIRE(run_cli("simulate --u 4 --r 2 --n1 20 --n2 20 --reps 1 --seed 3 --out-dir " +
                      (tmp / "d"),
                  tmp / "")
              .code == 0);

  SUBCASE("pmle with a fixed lambda") {
    const Run fit = run_cli("fit --data " + (tmp / "d/train_0001.csv") + " --sites " +
                                (tmp / "d/sites.csv") +
                                " --method pmle --lambda 0.15 --out " + (tmp / "m.json"),
                            tmp / "");
    REQUIRE(fit.code == 0);
    CHECK(fit.out.find("support=") != std::string::npos);

    const Run pred = run_cli("predict --model " + (tmp / "m.json") + " --data " +
                                 (tmp / "d/test_0001.csv") + " --out " + (tmp / "p.csv"),
                             tmp / "");
    REQUIRE(pred.code == 0);

    // prediction scores equal in-memory scoring through the saved model
    const ModelFile mf = load_model(tmp / "m.json");
    const FeatureTable table = load_feature_table(tmp / "d/test_0001.csv", mf.sites.ids);
    const Predictions p = load_predictions(tmp / "p.csv");
    REQUIRE(p.score.size() == static_cast<std::size_t>(table.features.rows()));
    for (int i = 0; i < table.features.rows(); ++i) {
      const double s = discriminant_score(table.features.row(i).transpose(), mf.model);
      CHECK(std::abs(p.score[i] - s) <= 1e-12 * std::max(1.0, std::abs(s)));
    }

    const Run ev = run_cli("evaluate --pred " + (tmp / "p.csv") + " --truth " +
                               (tmp / "d/test_0001.csv"),
                           tmp / "");
    REQUIRE(ev.code == 0);
    CHECK(ev.out.find("accuracy=") != std::string::npos);

    const Run ev2 = run_cli("evaluate --model " + (tmp / "m.json") + " --data " +
                                (tmp / "d/test_0001.csv"),
                            tmp / "");
    REQUIRE(ev2.code == 0);
    CHECK(ev2.out.find("confusion") != std::string::npos);
  }

  SUBCASE("nb fit and theoretical report") {
    REQUIRE(run_cli("fit --data " + (tmp / "d/train_0001.csv") + " --sites " +
                        (tmp / "d/sites.csv") + " --method nb --out " + (tmp / "nb.json"),
                    tmp / "")
                .code == 0);
    {
      std::ofstream out(tmp / "truth.json");
      out << R"({"family":"exp","sigma2":1.0,"nugget":0.2,"range":2.0,"mu1":[)";
      for (int j = 0; j < 16; ++j) out << (j ? "," : "") << (j < 10 ? 1 : 0);
      out << R"(],"mu2":[)";
      for (int j = 0; j < 16; ++j) out << (j ? "," : "") << 0;
      out << "]}";
    }
    const Run ev = run_cli("evaluate --model " + (tmp / "nb.json") + " --data " +
                               (tmp / "d/test_0001.csv") + " --theory --true-params " +
                               (tmp / "truth.json"),
                           tmp / "");
    REQUIRE(ev.code == 0);
    CHECK(ev.out.find("W_OPT=") != std::string::npos);
  }

  SUBCASE("empty test file gives a header-only prediction file") {
    {
      std::ofstream out(tmp / "empty.csv");
      out << slurp(tmp / "d/test_0001.csv").substr(
          0, slurp(tmp / "d/test_0001.csv").find('\n') + 1);
    }
    REQUIRE(run_cli("fit --data " + (tmp / "d/train_0001.csv") + " --sites " +
                        (tmp / "d/sites.csv") + " --method nb --out " + (tmp / "m2.json"),
                    tmp / "")
                .code == 0);
    const Run pred = run_cli("predict --model " + (tmp / "m2.json") + " --data " +
                                 (tmp / "empty.csv") + " --out " + (tmp / "pe.csv"),
                             tmp / "");
    REQUIRE(pred.code == 0);
    CHECK(slurp(tmp / "pe.csv") == "id,score,label\n");
  }

  SUBCASE("shuffled feature columns leave predictions unchanged") {
    REQUIRE(run_cli("fit --data " + (tmp / "d/train_0001.csv") + " --sites " +
                        (tmp / "d/sites.csv") + " --method pmle --lambda 0.1 --out " +
                        (tmp / "m3.json"),
                    tmp / "")
                .code == 0);
    // rewrite the test CSV with feature columns reversed
    const ModelFile mf = load_model(tmp / "m3.json");
    const FeatureTable table = load_feature_table(tmp / "d/test_0001.csv", mf.sites.ids);
    {
      std::ofstream out(tmp / "shuffled.csv");
      out << "label";
      for (int j = 15; j >= 0; --j) out << ',' << mf.sites.ids[j];
      out << '\n';
      out.precision(17);
      for (int i = 0; i < table.features.rows(); ++i) {
        out << table.labels[i];
        for (int j = 15; j >= 0; --j) out << ',' << table.features(i, j);
        out << '\n';
      }
    }
    REQUIRE(run_cli("predict --model " + (tmp / "m3.json") + " --data " +
                        (tmp / "d/test_0001.csv") + " --out " + (tmp / "pa.csv"),
                    tmp / "")
                .code == 0);
    REQUIRE(run_cli("predict --model " + (tmp / "m3.json") + " --data " + (tmp / "shuffled.csv") +
                        " --out " + (tmp / "pb.csv"),
                    tmp / "")
                .code == 0);
    CHECK(slurp(tmp / "pa.csv") == slurp(tmp / "pb.csv"));
  }
}

TEST_CASE("fit with cross-validated lambda prints the CV table") {
  Scratch tmp;
  REQUIRE(run_cli("simulate --u 4 --r 2 --n1 15 --n2 15 --reps 1 --seed 11 --out-dir " +
                      (tmp / "d"),
                  tmp / "")
              .code == 0);
  const Run fit = run_cli("fit --data " + (tmp / "d/train_0001.csv") + " --sites " +
                              (tmp / "d/sites.csv") + " --method pmle --lambda auto --out " +
                              (tmp / "m.json"),
                          tmp / "");
  REQUIRE(fit.code == 0);
  CHECK(fit.out.find("cv table") != std::string::npos);
  CHECK(fit.out.find("selected lambda:") != std::string::npos);
}

TEST_CASE("study subcommand") {
  Scratch tmp;
  SUBCASE("config file run") {
    {
      std::ofstream out(tmp / "study.json");
      out << R"({"u":4,"r":[1.5],"methods":["true","nb"],"reps":2,"seed":5,
                 "n1":10,"n2":10,"test_n1":20,"test_n2":20,"lambda":0.2,
                 "out_dir":")"
          << (tmp / "rep") << R"("})";
    }
    const Run st = run_cli("study --config " + (tmp / "study.json"), tmp / "");
    REQUIRE(st.code == 0);
    CHECK(fs::exists(tmp / "rep/report.csv"));
    CHECK(fs::exists(tmp / "rep/report.txt"));
    const std::string csv = slurp(tmp / "rep/report.csv");
    CHECK(csv.find("true") != std::string::npos);
    CHECK(csv.find("nb") != std::string::npos);
  }
  SUBCASE("bad config lists every problem and exits 2") {
    {
      std::ofstream out(tmp / "bad.json");
      out << R"({"u":0,"reps":1,"methods":["svm","nb"],"banana":3})";
    }
    const Run st = run_cli("study --config " + (tmp / "bad.json"), tmp / "");
    CHECK(st.code == 2);
    CHECK(st.out.find("u must be >= 1") != std::string::npos);
    CHECK(st.out.find("reps must be >= 2") != std::string::npos);
    CHECK(st.out.find("unknown method 'svm'") != std::string::npos);
    CHECK(st.out.find("unknown key 'banana'") != std::string::npos);
  }
  SUBCASE("flag-driven run") {
    const Run st = run_cli(
        "study --u 4 --r 1.5 --methods true,nb --reps 2 --seed 5 --n1 10 --n2 10 "
        "--test-n1 20 --test-n2 20 --lambda 0.2 --out-dir " +
            (tmp / "rep2"),
        tmp / "");
    REQUIRE(st.code == 0);
    CHECK(fs::exists(tmp / "rep2/report.csv"));
  }
}

TEST_CASE("exit codes") {
  Scratch tmp;
  CHECK(run_cli("simulate --u 4", tmp / "").code == 2);            // missing required flags
  CHECK(run_cli("frobnicate", tmp / "").code == 2);                // unknown subcommand
  CHECK(run_cli("predict --model " + (tmp / "nope.json") + " --data x --out y", tmp / "").code ==
        1);                                                        // runtime failure
  const Run fit = run_cli("fit --data missing.csv --sites missing.csv --method pmle --out m.json",
                          tmp / "");
  CHECK(fit.code == 1);
  const Run badmethod = run_cli("fit --data x --sites y --method banana --out m.json", tmp / "");
  CHECK(badmethod.code == 2);
  CHECK(run_cli("--help", tmp / "").code == 0);
}
