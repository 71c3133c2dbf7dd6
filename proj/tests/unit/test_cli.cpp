#include <doctest.h>

#include <cstdio>
#include <fcntl.h>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "srm/cli.hpp"

TEST_SUITE_BEGIN("cli");

namespace {

struct CliRun {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// run_cli with stdout/stderr captured via fd redirection
CliRun run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"srm"};
  for (const auto& a : args) argv.push_back(a.c_str());

  const std::string out_path = "/tmp/srm_cli_out.txt";
  const std::string err_path = "/tmp/srm_cli_err.txt";
  fflush(stdout);
  fflush(stderr);
  const int saved_out = dup(1);
  const int saved_err = dup(2);
  const int out_fd = open(out_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  const int err_fd = open(err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  dup2(out_fd, 1);
  dup2(err_fd, 2);
  close(out_fd);
  close(err_fd);

  CliRun result;
  result.exit_code = srm::run_cli(static_cast<int>(argv.size()), argv.data());

  fflush(stdout);
  fflush(stderr);
  dup2(saved_out, 1);
  dup2(saved_err, 2);
  close(saved_out);
  close(saved_err);

  auto slurp = [](const std::string& path) {
    std::ifstream is(path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  result.out = slurp(out_path);
  result.err = slurp(err_path);
  return result;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  os << text;
}

}  // namespace

TEST_CASE("unknown subcommands and flags exit with usage status") {
  CHECK(run({"frobnicate"}).exit_code == 1);
  CHECK(run({}).exit_code == 1);
  CHECK(run({"passk", "--bogus", "3"}).exit_code == 1);
  CHECK(run({"passk", "--n", "4"}).exit_code == 1);  // missing required flags
}

TEST_CASE("passk prints the coverage estimate") {
  const CliRun r = run({"passk", "--n", "4", "--c", "2", "--k", "2"});
  CHECK(r.exit_code == 0);
  CHECK(r.out == "0.833333\n");
  // invalid parameters are a runtime error, not a crash
  CHECK(run({"passk", "--n", "4", "--c", "2", "--k", "9"}).exit_code == 3);
}

TEST_CASE("inspect reports parameters, cache bytes and capacity") {
  write_file("/tmp/srm_cli_inspect.json",
             R"({"d_model":1024,"n_layers":16,"n_heads":4,"n_ctx":512,"vocab_size":8000,)"
             R"("head_mode":"mixed","bos_id":0})");
  const CliRun r = run({"inspect", "--config", "/tmp/srm_cli_inspect.json"});
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("cache bytes per sample (fp32): 65536") != std::string::npos);
  CHECK(r.out.find("compression capacity") != std::string::npos);
  CHECK(r.out.find("15155") != std::string::npos);
}

TEST_CASE("malformed configs cite the offending field") {
  write_file("/tmp/srm_cli_bad.json", R"({"d_model":13,"n_heads":4})");
  const CliRun r = run({"inspect", "--config", "/tmp/srm_cli_bad.json"});
  CHECK(r.exit_code == 3);
  CHECK(r.err.find("n_heads") != std::string::npos);

  write_file("/tmp/srm_cli_bad2.json", R"({"head_mode":"diagonal"})");
  const CliRun r2 = run({"inspect", "--config", "/tmp/srm_cli_bad2.json"});
  CHECK(r2.exit_code == 3);
  CHECK(r2.err.find("head_mode") != std::string::npos);
}

TEST_CASE("check-equivalence exits clean on a healthy build") {
  const CliRun r = run({"check-equivalence", "--seed", "1", "--rounds", "1"});
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("configs 32") != std::string::npos);
}

TEST_CASE("train, generate and bench round-trip through the filesystem") {
  write_file("/tmp/srm_cli_train.json", R"({
    "model": {"d_model": 16, "n_layers": 1, "n_heads": 2, "n_ctx": 32, "vocab_size": 258,
              "head_mode": "mixed"},
    "training": {"task": "copy", "copy_len": 4, "steps": 8, "batch": 4, "seed": 3,
                 "lr": 1e-3, "warmup_steps": 2, "log_every": 4,
                 "metrics_path": "/tmp/srm_cli_metrics.jsonl",
                 "checkpoint_path": "/tmp/srm_cli_model.srm"}
  })");
  std::remove("/tmp/srm_cli_metrics.jsonl");
  const CliRun train = run({"train", "--config", "/tmp/srm_cli_train.json"});
  CHECK(train.exit_code == 0);
  CHECK(train.out.find("final step") != std::string::npos);
  std::ifstream metrics("/tmp/srm_cli_metrics.jsonl");
  CHECK(metrics.good());

  const CliRun gen = run({"generate", "--checkpoint", "/tmp/srm_cli_model.srm", "--prompt", "ab",
                          "--max-new", "4", "--temperature", "0", "--seed", "1"});
  CHECK(gen.exit_code == 0);

  const CliRun bench = run({"bench", "--checkpoint", "/tmp/srm_cli_model.srm", "--batch", "2",
                            "--max-new", "4", "--report", "/tmp/srm_cli_bench.json"});
  CHECK(bench.exit_code == 0);
  std::ifstream report("/tmp/srm_cli_bench.json");
  CHECK(report.good());

  // missing checkpoint is a runtime error
  CHECK(run({"generate", "--checkpoint", "/tmp/srm_nope.srm"}).exit_code == 3);
}

TEST_SUITE_END();
