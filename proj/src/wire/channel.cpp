// SPDX-License-Identifier: Apache-2.0
#include "ember/wire/channel.h"

#include <condition_variable>
#include <sstream>

#include "ember/error.h"

namespace ember::wire {

namespace {

class Pipe {
 public:
  bool write(std::string_view line) {
    {
      std::lock_guard lk(mu_);
      if (closed_) return false;
      bytes_.append(line);
      bytes_.push_back('\n');
    }
    cv_.notify_all();
    return true;
  }

  std::optional<std::string> read() {
    std::unique_lock lk(mu_);
    for (;;) {
      const auto nl = bytes_.find('\n', scanned_);
      if (nl != std::string::npos) {
        std::string line = bytes_.substr(0, nl);
        bytes_.erase(0, nl + 1);
        scanned_ = 0;
        return line;
      }
      scanned_ = bytes_.size();
      if (closed_) return std::nullopt;
      cv_.wait(lk);
    }
  }

  void close() {
    {
      std::lock_guard lk(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::string bytes_;
  size_t scanned_ = 0;
  bool closed_ = false;
};

class LoopbackEnd : public Channel {
 public:
  LoopbackEnd(std::shared_ptr<Pipe> in, std::shared_ptr<Pipe> out) : in_(std::move(in)), out_(std::move(out)) {}
  ~LoopbackEnd() override { close(); }

  bool write_line(std::string_view line) override {
    if (line.find('\n') != std::string_view::npos) throw Error(Errc::internal, "wire line contains a newline");
    return out_->write(line);
  }
  std::optional<std::string> read_line() override { return in_->read(); }
  void close() override {
    in_->close();
    out_->close();
  }

 private:
  std::shared_ptr<Pipe> in_, out_;
};

}  // namespace

std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> loopback_pair() {
  auto a_to_b = std::make_shared<Pipe>();
  auto b_to_a = std::make_shared<Pipe>();
  return {std::make_unique<LoopbackEnd>(b_to_a, a_to_b), std::make_unique<LoopbackEnd>(a_to_b, b_to_a)};
}

void Transcript::add(Direction d, std::string line) {
  std::lock_guard lk(mu_);
  entries_.push_back({d, std::move(line)});
}

std::vector<TranscriptEntry> Transcript::entries() const {
  std::lock_guard lk(mu_);
  return entries_;
}

std::string Transcript::dump() const {
  std::string out;
  for (const auto& e : entries()) {
    out += e.direction == Direction::to_backend ? "> " : "< ";
    out += e.line;
    out += '\n';
  }
  return out;
}

Transcript Transcript::parse(std::string_view text) {
  Transcript t;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.size() < 2 || (line.compare(0, 2, "> ") != 0 && line.compare(0, 2, "< ") != 0))
      throw Error(Errc::invalid_request, "transcript line must start with '> ' or '< '");
    t.add(line[0] == '>' ? Direction::to_backend : Direction::to_frontend, line.substr(2));
  }
  return t;
}

bool RecordingChannel::write_line(std::string_view line) {
  // Recorded first so the entry precedes any reply it provokes.
  transcript_.add(Direction::to_backend, std::string(line));
  return inner_.write_line(line);
}

std::optional<std::string> RecordingChannel::read_line() {
  auto line = inner_.read_line();
  if (line) transcript_.add(Direction::to_frontend, *line);
  return line;
}

size_t replay_backend(Channel& channel, const Transcript& transcript) {
  size_t n = 0;
  for (const auto& e : transcript.entries()) {
    if (e.direction == Direction::to_backend) {
      const auto got = channel.read_line();
      if (!got) throw Error(Errc::internal, "replay: frontend closed before entry " + std::to_string(n));
      if (*got != e.line) throw Error(Errc::internal, "replay: entry " + std::to_string(n) + " differs: " + *got);
    } else if (!channel.write_line(e.line)) {
      throw Error(Errc::disconnected, "replay: channel closed at entry " + std::to_string(n));
    }
    ++n;
  }
  return n;
}

}  // namespace ember::wire
