// Copyright 2026 The FedVGCN Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FEDVGCN_TRANSPORT_H_
#define FEDVGCN_TRANSPORT_H_

#include <array>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "fedvgcn/wire.h"

namespace fedvgcn {

// Reliable, ordered, at-most-once delivery per sender/receiver pair.
// send() and poll() may be called concurrently by distinct parties.
class Transport {
 public:
  virtual ~Transport() = default;

  // Registers a role; a role may be attached once.
  virtual void attach(Role role) = 0;
  // Sends `m` from m.sender to `to`.
  virtual void send(Role to, const Message& m) = 0;
  // Next message for `to`, if one is available now.
  virtual std::optional<Message> poll(Role to) = 0;
  // Blocks until a message for `to` arrives. Throws ProtocolError when none
  // can arrive (empty in-process queue, closed connection).
  virtual Message wait(Role to) = 0;
  // Whether wait() can block for messages sent by other threads.
  virtual bool blocking() const = 0;
  // Unblocks every waiter with a ProtocolError; used when a party fails.
  virtual void abort() {}

  std::uint64_t bytes_sent() const { return bytes_sent_.load(); }

 protected:
  void check_attached(Role r) const;
  void mark_attached(Role r);
  std::atomic<std::uint64_t> bytes_sent_{0};

 private:
  std::array<std::atomic<bool>, kNumRoles> attached_{};
};

// Single-process queues. poll() serves senders round-robin, so a fixed
// sequence of calls gives a fixed delivery order.
class InProcessTransport final : public Transport {
 public:
  // When `record` is set every delivered message is serialized into the
  // transcript in delivery order.
  explicit InProcessTransport(bool record = false) : record_(record) {}

  void attach(Role role) override;
  void send(Role to, const Message& m) override;
  std::optional<Message> poll(Role to) override;
  Message wait(Role to) override;
  bool blocking() const override { return false; }

  bool recording() const { return record_; }
  const std::vector<std::vector<std::uint8_t>>& transcript() const { return transcript_; }
  // FNV-1a over the recorded frames.
  std::uint64_t transcript_digest() const { return digest_; }

 private:
  mutable std::mutex mu_;
  std::array<std::array<std::deque<Message>, kNumRoles>, kNumRoles> queues_;  // [from][to]
  std::array<int, kNumRoles> next_sender_{};
  bool record_;
  std::vector<std::vector<std::uint8_t>> transcript_;
  std::uint64_t digest_ = 14695981039346656037ull;
};

// Framed byte streams over one socketpair per party pair. A reader thread per
// incoming connection drains frames into the receiving party's inbox, so
// large concurrent sends cannot deadlock on socket buffers.
class SocketTransport final : public Transport {
 public:
  SocketTransport();
  ~SocketTransport() override;
  SocketTransport(const SocketTransport&) = delete;
  SocketTransport& operator=(const SocketTransport&) = delete;

  void attach(Role role) override;
  void send(Role to, const Message& m) override;
  std::optional<Message> poll(Role to) override;
  Message wait(Role to) override;
  bool blocking() const override { return true; }
  void abort() override;

  // Closes the link between two roles; pending and later receives on either
  // side fail with ProtocolError.
  void disconnect(Role a, Role b);

 private:
  struct Inbox {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Message> messages;
    std::optional<std::string> failure;
  };

  void reader_loop(Role me, Role peer);
  std::optional<Message> pop_locked(Inbox& box);

  std::array<std::array<int, kNumRoles>, kNumRoles> fd_{};  // [from][to]
  std::array<std::array<std::mutex, kNumRoles>, kNumRoles> write_mu_;
  std::array<Inbox, kNumRoles> inbox_;
  std::vector<std::thread> readers_;
};

}  // namespace fedvgcn

#endif  // FEDVGCN_TRANSPORT_H_
