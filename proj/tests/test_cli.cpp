#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

// End-to-end checks of the command-line tool. CLI_BIN is injected by the
// build so the tests always exercise the freshly built binary.

namespace fs = std::filesystem;

namespace {

const std::string kBin = CLI_BIN;

int run(const std::string& args, const std::string& log = "/dev/null") {
  const std::string cmd = kBin + " " + args + " >" + log + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path work_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vfb_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool same_file(const fs::path& a, const fs::path& b) { return slurp(a) == slurp(b); }

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

}  // namespace

TEST_CASE("usage and i/o errors map to documented exit codes") {
  const fs::path d = work_dir("codes");
  CHECK(run("--help") == 0);
  CHECK(run("simulate --help") == 0);
  CHECK(run("") == 1);                                                       // missing subcommand
  CHECK(run("simulate --model 1 --out " + d.string()) == 1);                 // seed is mandatory
  CHECK(run("simulate --model 9 --seed 1 --out " + d.string()) == 1);        // bad model
  CHECK(run("simulate --model 1 --seed 1 --individuals 0 --out " + d.string()) == 1);
  CHECK(run("fit-stage1 --model 1 --seed 1 --in /nonexistent.csv --out " + d.string()) == 2);
  CHECK(run("fit-stage2 --seed 1 --in " + (d / "empty").string()) == 2);     // no manifest
  fs::remove_all(d);
}

TEST_CASE("simulate is seed-deterministic") {
  const fs::path a = work_dir("sim_a"), b = work_dir("sim_b"), c = work_dir("sim_c");
  const std::string common = " --model 3 --individuals 3 --visits 4 --locations 3 --truth-preset table2 --out ";
  REQUIRE(run("simulate --seed 5" + common + a.string()) == 0);
  REQUIRE(run("simulate --seed 5" + common + b.string()) == 0);
  REQUIRE(run("simulate --seed 6" + common + c.string()) == 0);
  CHECK(same_file(a / "dataset.csv", b / "dataset.csv"));
  CHECK_FALSE(same_file(a / "dataset.csv", c / "dataset.csv"));
  CHECK(fs::exists(a / "truth.txt"));
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(c);
}

TEST_CASE("full pipeline produces the expected artifacts") {
  const fs::path d = work_dir("pipe");
  REQUIRE(run("simulate --model 1 --seed 11 --individuals 3 --visits 5 --locations 3 --out " + d.string()) == 0);
  REQUIRE(run("fit-stage1 --model 1 --seed 11 --iterations 1600 --burn-in 800 --thin 8 --in " +
              (d / "dataset.csv").string() + " --out " + d.string()) == 0);
  for (const std::string id : {"P001", "P002", "P003"}) {
    CHECK(fs::exists(d / ("pool_" + id + ".csv")));
    CHECK(fs::exists(d / ("effects_" + id + ".csv")));
  }
  CHECK(first_line(d / "pool_P001.csv") == "alpha0,alpha1,C_gamma_1,C_gamma_2,C_gamma_3,C_eta_1,C_eta_2,C_eta_3,C_lambda_1,C_lambda_2,C_lambda_3,sigma2");

  REQUIRE(run("fit-stage2 --seed 11 --iterations 600 --burn-in 300 --chains 2 --in " + d.string()) == 0);
  CHECK(fs::exists(d / "chain_1.csv"));
  CHECK(fs::exists(d / "chain_2.csv"));
  CHECK(fs::exists(d / "theta_P002.csv"));
  CHECK(first_line(d / "summary.csv") == "parameter,mean,sd,median,ci2.5,ci97.5");
  CHECK(first_line(d / "rhat.csv") == "parameter,rhat");

  // evaluate without prior recovery: auto-recovers with a note on stderr
  const fs::path log = d / "eval.log";
  REQUIRE(run("evaluate --seed 11 --draws 8 --inner-iterations 60 --in " + d.string(), log.string()) == 0);
  CHECK(slurp(log).find("recovered effects missing") != std::string::npos);
  CHECK(fs::exists(d / "recovered_P003.csv"));
  CHECK(fs::exists(d / "ppp.csv"));
  CHECK(first_line(d / "dic.csv") == "dbar,dhat,p_d,dic");

  // ppp rows come out sorted ascending by p
  {
    std::ifstream in(d / "ppp.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "individual,p_d");
    double prev = -1.0;
    while (std::getline(in, line)) {
      const double p = std::stod(line.substr(line.find(',') + 1));
      CHECK(p >= prev);
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      prev = p;
    }
    CHECK(prev >= 0.0);
  }

  REQUIRE(run("summarize --in " + d.string(), (d / "sum.log").string()) == 0);
  CHECK(first_line(d / "sum.log") == "parameter,mean,sd,median,ci2.5,ci97.5,rhat");

  // asking for a different model than the fitted artifacts is a usage error
  CHECK(run("fit-stage2 --seed 11 --model 2 --in " + d.string()) == 1);
  CHECK(run("evaluate --seed 11 --model 3 --in " + d.string()) == 1);
  fs::remove_all(d);
}

TEST_CASE("outputs are byte-identical regardless of --jobs") {
  const fs::path d = work_dir("jobs");
  REQUIRE(run("simulate --model 1 --seed 3 --individuals 3 --visits 5 --locations 2 --out " + d.string()) == 0);
  const fs::path j1 = d / "j1", j3 = d / "j3";
  const std::string tail = " --iterations 1600 --burn-in 800 --thin 8 --in " + (d / "dataset.csv").string();
  REQUIRE(run("fit-stage1 --model 1 --seed 3 --jobs 1" + tail + " --out " + j1.string()) == 0);
  REQUIRE(run("fit-stage1 --model 1 --seed 3 --jobs 3" + tail + " --out " + j3.string()) == 0);
  for (const std::string id : {"P001", "P002", "P003"}) {
    CHECK(same_file(j1 / ("pool_" + id + ".csv"), j3 / ("pool_" + id + ".csv")));
    CHECK(same_file(j1 / ("effects_" + id + ".csv"), j3 / ("effects_" + id + ".csv")));
  }
  REQUIRE(run("fit-stage2 --seed 3 --iterations 600 --burn-in 300 --in " + j1.string()) == 0);
  REQUIRE(run("fit-stage2 --seed 3 --iterations 600 --burn-in 300 --in " + j3.string()) == 0);
  CHECK(same_file(j1 / "chain_1.csv", j3 / "chain_1.csv"));
  CHECK(same_file(j1 / "summary.csv", j3 / "summary.csv"));
  fs::remove_all(d);
}

TEST_CASE("stage 2 warns on a truncated pool but still runs") {
  const fs::path d = work_dir("trunc");
  REQUIRE(run("simulate --model 1 --seed 9 --individuals 2 --visits 5 --locations 2 --out " + d.string()) == 0);
  REQUIRE(run("fit-stage1 --model 1 --seed 9 --iterations 1600 --burn-in 800 --thin 8 --in " +
              (d / "dataset.csv").string() + " --out " + d.string()) == 0);
  // keep only the header and 10 draws of one pool
  {
    std::ifstream in(d / "pool_P001.csv");
    std::ostringstream keep;
    std::string line;
    for (int i = 0; i <= 10 && std::getline(in, line); ++i) keep << line << "\n";
    in.close();
    std::ofstream out(d / "pool_P001.csv");
    out << keep.str();
  }
  const fs::path log = d / "s2.log";
  CHECK(run("fit-stage2 --seed 9 --iterations 600 --burn-in 300 --in " + d.string(), log.string()) == 0);
  CHECK(slurp(log).find("warning") != std::string::npos);
  CHECK(slurp(log).find("P001") != std::string::npos);

  // a missing pool is an error naming the individual
  fs::remove(d / "pool_P002.csv");
  CHECK(run("fit-stage2 --seed 9 --in " + d.string(), log.string()) == 2);
  CHECK(slurp(log).find("P002") != std::string::npos);
  fs::remove_all(d);
}

TEST_CASE("config file supplies options but flags win") {
  const fs::path d = work_dir("cfg");
  {
    std::ofstream out(d / "run.cfg");
    out << "model=1\n";
    out << "individuals=2\n";
    out << "visits=4\n";
    out << "locations=2\n";
  }
  const fs::path a = d / "a", b = d / "b";
  REQUIRE(run("simulate --config " + (d / "run.cfg").string() + " --seed 2 --out " + a.string()) == 0);
  REQUIRE(run("simulate --config " + (d / "run.cfg").string() + " --seed 2 --individuals 3 --out " + b.string()) == 0);
  auto count_ids = [](const fs::path& p) {
    std::ifstream in(p / "dataset.csv");
    std::string line;
    std::set<std::string> ids;
    std::getline(in, line);
    while (std::getline(in, line)) ids.insert(line.substr(0, line.find(',')));
    return ids.size();
  };
  CHECK(count_ids(a) == 2);
  CHECK(count_ids(b) == 3);  // command-line flag overrides the file
  fs::remove_all(d);
}
