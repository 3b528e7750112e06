// SPDX-License-Identifier: Apache-2.0
// Runs the ember executable as a child process for CLI-level tests.
#pragma once

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "support/toy.h"

extern char** environ;

namespace testing {

inline std::string ember_cli() { return EMBER_CLI_PATH; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A spawned child with stdin from a file and stdout/stderr captured to files.
class Child {
 public:
  Child(std::vector<std::string> args, const std::string& input = "", std::vector<std::string> env_extra = {})
      : dir_("cli") {
    {
      std::ofstream(dir_ / "in") << input;
    }
    std::vector<std::string> all = {ember_cli()};
    all.insert(all.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : all) argv.push_back(a.data());
    argv.push_back(nullptr);

    std::vector<std::string> env_store;
    for (char** e = environ; *e; ++e) {
      const std::string kv = *e;
      bool overridden = false;
      for (auto& x : env_extra)
        if (kv.substr(0, kv.find('=') + 1) == x.substr(0, x.find('=') + 1)) overridden = true;
      if (!overridden) env_store.push_back(kv);
    }
    env_store.insert(env_store.end(), env_extra.begin(), env_extra.end());
    std::vector<char*> envp;
    for (auto& e : env_store) envp.push_back(e.data());
    envp.push_back(nullptr);

    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_addopen(&fa, 0, (dir_ / "in").c_str(), O_RDONLY, 0);
    posix_spawn_file_actions_addopen(&fa, 1, (dir_ / "out").c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_addopen(&fa, 2, (dir_ / "err").c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    const int rc = posix_spawn(&pid_, argv[0], &fa, nullptr, argv.data(), envp.data());
    posix_spawn_file_actions_destroy(&fa);
    if (rc != 0) throw std::runtime_error("posix_spawn failed for " + all[0]);
  }
  ~Child() {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      wait();
    }
  }
  Child(const Child&) = delete;
  Child& operator=(const Child&) = delete;

  // Exit status, or 128 + signal.
  int wait() {
    int status = 0;
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  }
  void signal(int sig) { ::kill(pid_, sig); }

  std::string out() const { return slurp(dir_ / "out"); }
  std::string err() const { return slurp(dir_ / "err"); }

  // Polls stdout until it holds a full line; empty on timeout.
  std::string first_line(double timeout_s) const {
    const auto end = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
    while (std::chrono::steady_clock::now() < end) {
      const std::string o = out();
      if (auto nl = o.find('\n'); nl != std::string::npos) return o.substr(0, nl);
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    return "";
  }

 private:
  TempDir dir_;
  pid_t pid_ = -1;
};

struct RunResult {
  int code = 0;
  std::string out, err;
};

inline RunResult run_cli(std::vector<std::string> args, const std::string& input = "",
                         std::vector<std::string> env_extra = {}) {
  Child c(std::move(args), input, std::move(env_extra));
  RunResult r;
  r.code = c.wait();
  r.out = c.out();
  r.err = c.err();
  return r;
}

}  // namespace testing
