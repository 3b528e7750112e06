// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ember::wire {

// One end of a bidirectional, newline-framed byte stream. Writes are
// thread-safe; one thread reads.
class Channel {
 public:
  virtual ~Channel() = default;
  // False once the channel is closed. `line` must not contain '\n'.
  virtual bool write_line(std::string_view line) = 0;
  // Blocks for the next complete line; nullopt after close.
  virtual std::optional<std::string> read_line() = 0;
  // Closes both directions; pending and future reads on either end return
  // nullopt once buffered lines are consumed.
  virtual void close() = 0;
};

// Two connected ends over in-memory byte pipes.
std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> loopback_pair();

enum class Direction { to_backend, to_frontend };

struct TranscriptEntry {
  Direction direction;
  std::string line;
};

// Lines in the order one end saw them.
class Transcript {
 public:
  Transcript() = default;
  Transcript(const Transcript& other) : entries_(other.entries()) {}
  Transcript& operator=(const Transcript& other) {
    auto copy = other.entries();
    std::lock_guard lk(mu_);
    entries_ = std::move(copy);
    return *this;
  }

  void add(Direction d, std::string line);
  std::vector<TranscriptEntry> entries() const;

  // "> " for to_backend and "< " for to_frontend, one entry per line.
  std::string dump() const;
  static Transcript parse(std::string_view text);

 private:
  mutable std::mutex mu_;
  std::vector<TranscriptEntry> entries_;
};

// Frontend-side wrapper that records every line through `inner`.
class RecordingChannel : public Channel {
 public:
  RecordingChannel(Channel& inner, Transcript& transcript) : inner_(inner), transcript_(transcript) {}

  bool write_line(std::string_view line) override;
  std::optional<std::string> read_line() override;
  void close() override { inner_.close(); }

 private:
  Channel& inner_;
  Transcript& transcript_;
};

// Stands in for a backend: reads each to_backend line of `transcript` from
// `channel`, checks it matches, and writes the recorded to_frontend lines
// in between. Returns the number of entries replayed; throws Internal on
// the first mismatch.
size_t replay_backend(Channel& channel, const Transcript& transcript);

}  // namespace ember::wire
