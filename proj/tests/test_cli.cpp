#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr folded into the captured output.
Result ru(const std::string& args) {
  const std::string cmd = std::string(RU_BINARY) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

struct Workspace {
  fs::path dir = fs::temp_directory_path() / ("rulstm_cli_" + std::to_string(::getpid()));
  std::string common;
  Workspace() {
    fs::create_directories(dir);
    std::ofstream(dir / "run.ini") << "[data]\nn_train_videos = 4\nn_val_videos = 2\nactions_per_video = 5\n"
                                      "n_actions = 6\nn_verbs = 3\nn_nouns = 3\n"
                                      "[model]\nhidden = 8\n"
                                      "[train]\nepochs = 2\njoint_epochs = 2\nbatch_size = 8\n";
    common = "-c " + (dir / "run.ini").string() + " --data-dir " + (dir / "data").string() +
             " --output-dir " + (dir / "out").string();
  }
  ~Workspace() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("generate, train, evaluate and inspect") {
  Workspace w;
  auto g = ru("gen-data " + w.common);
  REQUIRE_MESSAGE(g.code == 0, g.out);
  CHECK(fs::exists(w.dir / "data" / "manifest.json"));

  auto t = ru("train " + w.common + " --fusion matt");
  REQUIRE_MESSAGE(t.code == 0, t.out);
  CHECK(fs::exists(w.dir / "out" / "model.ruck"));
  const auto report = nlohmann::json::parse(std::ifstream(w.dir / "out" / "train_report.json"));
  CHECK(report["stages"].size() == 5);

  auto e = ru("eval " + w.common);
  REQUIRE_MESSAGE(e.code == 0, e.out);
  CHECK(fs::exists(w.dir / "out" / "eval_report.json"));
  CHECK(fs::exists(w.dir / "out" / "eval_scores.csv"));

  auto big_k = ru("eval " + w.common + " -k 7");
  CHECK(big_k.code == 2);
  const auto err = nlohmann::json::parse(big_k.out.substr(big_k.out.rfind('{')));
  CHECK(err["error"] == "usage");

  auto all = ru("anticipate " + w.common + " --sample 1");
  REQUIRE_MESSAGE(all.code == 0, all.out);
  CHECK(count(all.out, "weights:") == 8);
  CHECK(count(all.out, "tau_a ") == 8);
  auto one = ru("anticipate " + w.common + " --sample 1 --tau-a 1.0");
  REQUIRE_MESSAGE(one.code == 0, one.out);
  CHECK(count(one.out, "weights:") == 1);
  CHECK(one.out.find("tau_a 1.00 s (step 11)") != std::string::npos);
  CHECK(ru("anticipate " + w.common + " --tau-a 0.3").code == 2);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(ru("").code == 2);
  CHECK(ru("train --no-such-flag").code == 2);
  CHECK(ru("train --set model.hidden").code == 2);
  CHECK(ru("train --fusion sideways").code == 2);
}

TEST_CASE("missing inputs are reported as one JSON line") {
  auto r = ru("train --data-dir /nonexistent/rulstm");
  CHECK(r.code != 0);
  CHECK(count(r.out, "\n") == 1);
  CHECK(nlohmann::json::parse(r.out).contains("message"));
}

TEST_CASE("every command has help") {
  for (std::string cmd : {"", "gen-data", "train", "eval", "anticipate", "gradcheck"}) {
    auto r = ru(cmd + " --help");
    CHECK(r.code == 0);
    CHECK(r.out.find("Usage") != std::string::npos);
  }
}

TEST_CASE("gradient check command") {
  auto r = ru("gradcheck");
  CHECK(r.code == 0);
  CHECK(r.out.find("model:anticipation:matt") != std::string::npos);
}
