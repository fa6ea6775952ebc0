#pragma once

#include <json.hpp>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <type_traits>
#include <cmath>
#include <cstring>
#include <algorithm>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "mordal/candidate.hpp"
#include "mordal/error.hpp"
#include "mordal/oracle.hpp"

namespace mordal {

namespace detail {

inline constexpr int kProtocolVersion = 1;

// One trainer subprocess; callers serialize access.
class TrainerProcess {
 public:
  TrainerProcess(std::vector<std::string> command, std::chrono::milliseconds timeout)
      : command_(std::move(command)), timeout_(timeout) {
    spawn();
    try {
      handshake();
    } catch (...) {
      shutdown();
      throw;
    }
  }

  TrainerProcess(const TrainerProcess&) = delete;
  TrainerProcess& operator=(const TrainerProcess&) = delete;

  ~TrainerProcess() { shutdown(); }

  EvalRecord query(const Candidate& candidate, double ratio) {
    const long id = ++next_id_;
    nlohmann::ordered_json req;
    req["id"] = id;
    req["op"] = "eval";
    req["ve"] = candidate.ve;
    req["llm"] = candidate.llm;
    req["ratio"] = ratio;
    const auto line = exchange(req.dump());
    nlohmann::json resp;
    try {
      resp = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw OracleError(ErrorKind::kProtocol, "malformed response from trainer", line);
    }
    if (!resp.is_object() || !resp.contains("id") || !resp["id"].is_number_integer()) {
      throw OracleError(ErrorKind::kProtocol, "response without integer id", line);
    }
    if (resp["id"].get<long>() != id) {
      throw OracleError(ErrorKind::kProtocol,
                        "response id " + std::to_string(resp["id"].get<long>()) +
                            " does not match request id " + std::to_string(id),
                        line);
    }
    if (!resp.contains("error") || !resp["error"].is_number() || !resp.contains("cost") ||
        !resp["cost"].is_number()) {
      throw OracleError(ErrorKind::kProtocol, "response lacks numeric error/cost", line);
    }
    const double error = resp["error"].get<double>();
    const double cost = resp["cost"].get<double>();
    if (!(error > 0.0 && error <= 1.0)) {
      throw OracleError(ErrorKind::kProtocol, "error must lie in (0, 1]", line);
    }
    if (!std::isfinite(cost) || cost < 0.0) {
      throw OracleError(ErrorKind::kProtocol, "cost must be finite and >= 0", line);
    }
    return {candidate, ratio, error, cost};
  }

 private:
  void spawn() {
    // A trainer that dies mid-write must surface as an error, not kill us.
    ::signal(SIGPIPE, SIG_IGN);
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) throw Error(ErrorKind::kOracle, std::string("pipe: ") + std::strerror(errno));
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw Error(ErrorKind::kOracle, std::string("pipe: ") + std::strerror(errno));
    }
    std::vector<char*> argv;
    for (auto& arg : command_) argv.push_back(arg.data());
    argv.push_back(nullptr);

    pid_ = ::fork();
    if (pid_ < 0) throw Error(ErrorKind::kOracle, std::string("fork: ") + std::strerror(errno));
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execvp(argv[0], argv.data());
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    ::fcntl(write_fd_, F_SETFD, FD_CLOEXEC);
    ::fcntl(read_fd_, F_SETFD, FD_CLOEXEC);
  }

  void handshake() {
    const auto line = exchange(R"({"id":0,"op":"hello"})");
    nlohmann::json resp;
    try {
      resp = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw OracleError(ErrorKind::kProtocol, "malformed handshake response", line);
    }
    if (!resp.is_object() || resp.value("id", -1) != 0 || resp.value("protocol", -1) != kProtocolVersion) {
      throw OracleError(ErrorKind::kProtocol, "handshake expected {\"id\":0,\"protocol\":1}", line);
    }
  }

  std::string exchange(const std::string& request) {
    std::string out = request + "\n";
    std::size_t written = 0;
    while (written < out.size()) {
      const auto n = ::write(write_fd_, out.data() + written, out.size() - written);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw OracleError(ErrorKind::kOracle, "trainer stdin closed" + exit_note(), request);
      }
      written += static_cast<std::size_t>(n);
    }
    return read_line(request);
  }

  std::string read_line(const std::string& request) {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    while (true) {
      if (const auto pos = buffer_.find('\n'); pos != std::string::npos) {
        std::string line = buffer_.substr(0, pos);
        buffer_.erase(0, pos + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        kill_child();
        throw OracleError(ErrorKind::kOracle, "trainer timed out", buffer_.empty() ? request : buffer_);
      }
      pollfd pfd{read_fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw OracleError(ErrorKind::kOracle, std::string("poll: ") + std::strerror(errno), request);
      }
      if (ready == 0) continue;
      char chunk[4096];
      const auto n = ::read(read_fd_, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw OracleError(ErrorKind::kOracle, std::string("read: ") + std::strerror(errno), request);
      }
      if (n == 0) {
        throw OracleError(ErrorKind::kOracle, "trainer closed its output" + exit_note(),
                          buffer_.empty() ? request : buffer_);
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  std::string exit_note() {
    if (pid_ <= 0) return {};
    int status = 0;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(500);
    while (std::chrono::steady_clock::now() < deadline) {
      const auto r = ::waitpid(pid_, &status, WNOHANG);
      if (r == pid_) {
        pid_ = -1;
        if (WIFEXITED(status)) return " (exit status " + std::to_string(WEXITSTATUS(status)) + ")";
        if (WIFSIGNALED(status)) return " (killed by signal " + std::to_string(WTERMSIG(status)) + ")";
        return {};
      }
      ::usleep(1000);
    }
    return {};
  }

  void kill_child() {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
      pid_ = -1;
    }
  }

  void shutdown() {
    if (write_fd_ >= 0) ::close(write_fd_);
    write_fd_ = -1;
    if (pid_ > 0) {
      int status = 0;
      bool reaped = false;
      for (int i = 0; i < 200 && !reaped; ++i) {
        reaped = ::waitpid(pid_, &status, WNOHANG) == pid_;
        if (!reaped) ::usleep(1000);
      }
      if (!reaped) kill_child();
      pid_ = -1;
    }
    if (read_fd_ >= 0) ::close(read_fd_);
    read_fd_ = -1;
  }

  std::vector<std::string> command_;
  std::chrono::milliseconds timeout_;
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::string buffer_;
  long next_id_ = 0;
};

}  // namespace detail

// Oracle backed by trainer subprocesses speaking newline-delimited JSON on
// stdin/stdout:
//   -> {"id":0,"op":"hello"}                      <- {"id":0,"protocol":1}
//   -> {"id":n,"op":"eval","ve":..,"llm":..,"ratio":r}
//   <- {"id":n,"error":e,"cost":c}
// Error and cost are returned verbatim; the trainer owns checkpoint
// accounting. Each subprocess has at most one outstanding request; `workers`
// subprocesses are started to serve concurrent queries.
class ExternalOracle : public Oracle {
 public:
  static constexpr int kProtocolVersion = detail::kProtocolVersion;

  explicit ExternalOracle(std::vector<std::string> command,
                          std::chrono::milliseconds timeout = std::chrono::seconds(60), std::size_t workers = 1)
      : command_(std::move(command)), timeout_(timeout), workers_(std::max<std::size_t>(1, workers)) {
    if (command_.empty()) throw Error(ErrorKind::kConfig, "external oracle command is empty");
    // Started lazily so a pool never launches more trainers than it uses.
    slots_.resize(workers_);
    for (std::size_t i = 0; i < workers_; ++i) idle_.push_back(workers_ - 1 - i);
    acquire_and([](detail::TrainerProcess&) {});
  }

  EvalRecord query(const Candidate& candidate, double ratio) override {
    require_ratio(ratio);
    return acquire_and([&](detail::TrainerProcess& p) { return p.query(candidate, ratio); });
  }

  std::unique_ptr<Oracle> fresh() const override {
    return std::make_unique<ExternalOracle>(command_, timeout_, workers_);
  }

 private:
  template <typename F>
  auto acquire_and(F&& fn) -> decltype(fn(std::declval<detail::TrainerProcess&>())) {
    std::size_t slot = 0;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return !idle_.empty(); });
      slot = idle_.back();
      idle_.pop_back();
    }
    auto release = [&] {
      std::lock_guard lock(mu_);
      idle_.push_back(slot);
      cv_.notify_one();
    };
    try {
      if (!slots_[slot]) slots_[slot] = std::make_unique<detail::TrainerProcess>(command_, timeout_);
      if constexpr (std::is_void_v<decltype(fn(*slots_[slot]))>) {
        fn(*slots_[slot]);
        release();
      } else {
        auto out = fn(*slots_[slot]);
        release();
        return out;
      }
    } catch (...) {
      // A failed trainer is not reused; the slot restarts on next use.
      slots_[slot].reset();
      release();
      throw;
    }
  }

  std::vector<std::string> command_;
  std::chrono::milliseconds timeout_;
  std::size_t workers_;
  std::vector<std::unique_ptr<detail::TrainerProcess>> slots_;
  std::vector<std::size_t> idle_;
  std::mutex mu_;
  std::condition_variable cv_;
};

}  // namespace mordal
