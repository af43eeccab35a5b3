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

#include "fedvgcn/transport.h"

#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <string>

#include "fedvgcn/error.h"

namespace fedvgcn {
namespace {

int idx(Role r) { return static_cast<int>(r); }

bool write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::send(fd, data, n, MSG_NOSIGNAL);
    if (k < 0 && errno == EINTR) continue;
    if (k <= 0) return false;
    data += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

bool read_all(int fd, std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::recv(fd, data, n, 0);
    if (k < 0 && errno == EINTR) continue;
    if (k <= 0) return false;
    data += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

}  // namespace

void Transport::check_attached(Role r) const {
  if (idx(r) >= kNumRoles || !attached_[idx(r)].load()) {
    throw ProtocolError("unknown recipient " + std::string(role_name(r)));
  }
}

void Transport::mark_attached(Role r) {
  if (idx(r) >= kNumRoles) throw ProtocolError("unknown role");
  if (attached_[idx(r)].exchange(true)) {
    throw ProtocolError("duplicate role " + std::string(role_name(r)));
  }
}

void InProcessTransport::attach(Role role) { mark_attached(role); }

void InProcessTransport::send(Role to, const Message& m) {
  check_attached(to);
  check_attached(m.sender);
  std::lock_guard lock(mu_);
  queues_[idx(m.sender)][idx(to)].push_back(m);
}

std::optional<Message> InProcessTransport::poll(Role to) {
  check_attached(to);
  std::lock_guard lock(mu_);
  for (int k = 0; k < kNumRoles; ++k) {
    const int from = (next_sender_[idx(to)] + k) % kNumRoles;
    auto& q = queues_[from][idx(to)];
    if (q.empty()) continue;
    Message m = std::move(q.front());
    q.pop_front();
    next_sender_[idx(to)] = (from + 1) % kNumRoles;
    if (record_) {
      auto frame = serialize(m);
      bytes_sent_ += frame.size();
      for (auto b : frame) digest_ = (digest_ ^ b) * 1099511628211ull;
      transcript_.push_back(std::move(frame));
    }
    return m;
  }
  return std::nullopt;
}

Message InProcessTransport::wait(Role to) {
  if (auto m = poll(to)) return std::move(*m);
  throw ProtocolError("no message pending for " + std::string(role_name(to)));
}

SocketTransport::SocketTransport() {
  for (auto& row : fd_) row.fill(-1);
  for (int a = 0; a < kNumRoles; ++a) {
    for (int b = a + 1; b < kNumRoles; ++b) {
      int sv[2];
      if (::socketpair(AF_UNIX, SOCK_STREAM, 0, sv) != 0) {
        throw ProtocolError(std::string("socketpair failed: ") + std::strerror(errno));
      }
      fd_[a][b] = sv[0];
      fd_[b][a] = sv[1];
    }
  }
}

SocketTransport::~SocketTransport() {
  for (int a = 0; a < kNumRoles; ++a) {
    for (int b = 0; b < kNumRoles; ++b) {
      if (fd_[a][b] >= 0) ::shutdown(fd_[a][b], SHUT_RDWR);
    }
  }
  for (auto& t : readers_) t.join();
  for (int a = 0; a < kNumRoles; ++a) {
    for (int b = 0; b < kNumRoles; ++b) {
      if (fd_[a][b] >= 0) ::close(fd_[a][b]);
    }
  }
}

void SocketTransport::attach(Role role) {
  mark_attached(role);
  for (int p = 0; p < kNumRoles; ++p) {
    if (p == idx(role)) continue;
    readers_.emplace_back([this, role, p] { reader_loop(role, static_cast<Role>(p)); });
  }
}

void SocketTransport::send(Role to, const Message& m) {
  check_attached(to);
  if (to == m.sender) throw ProtocolError("a party cannot send to itself");
  const auto frame = serialize(m);
  std::lock_guard lock(write_mu_[idx(m.sender)][idx(to)]);
  if (!write_all(fd_[idx(m.sender)][idx(to)], frame.data(), frame.size())) {
    throw ProtocolError("connection lost: " + std::string(role_name(m.sender)) + " -> " +
                        std::string(role_name(to)));
  }
  bytes_sent_ += frame.size();
}

void SocketTransport::reader_loop(Role me, Role peer) {
  // The socket held by `me` towards `peer` carries peer -> me frames.
  const int fd = fd_[idx(me)][idx(peer)];
  Inbox& box = inbox_[idx(me)];
  std::string failure;
  try {
    while (true) {
      std::vector<std::uint8_t> frame(kFrameHeaderSize);
      if (!read_all(fd, frame.data(), frame.size())) {
        failure = "connection lost: " + std::string(role_name(peer)) + " -> " +
                  std::string(role_name(me));
        break;
      }
      const auto len = frame_payload_size(frame);
      frame.resize(kFrameHeaderSize + len);
      if (!read_all(fd, frame.data() + kFrameHeaderSize, len)) {
        failure = "connection lost mid-frame from " + std::string(role_name(peer));
        break;
      }
      Message m = deserialize(frame);
      if (m.sender != peer) {
        failure = "sender role does not match the connection";
        break;
      }
      std::lock_guard lock(box.mu);
      box.messages.push_back(std::move(m));
      box.cv.notify_all();
    }
  } catch (const std::exception& e) {
    failure = e.what();
  }
  std::lock_guard lock(box.mu);
  if (!box.failure) box.failure = failure;
  box.cv.notify_all();
}

std::optional<Message> SocketTransport::pop_locked(Inbox& box) {
  if (box.messages.empty()) {
    // A closed link only matters once everything already received is used.
    if (box.failure) throw ProtocolError(*box.failure);
    return std::nullopt;
  }
  Message m = std::move(box.messages.front());
  box.messages.pop_front();
  return m;
}

std::optional<Message> SocketTransport::poll(Role to) {
  check_attached(to);
  Inbox& box = inbox_[idx(to)];
  std::lock_guard lock(box.mu);
  return pop_locked(box);
}

Message SocketTransport::wait(Role to) {
  check_attached(to);
  Inbox& box = inbox_[idx(to)];
  std::unique_lock lock(box.mu);
  box.cv.wait(lock, [&] { return !box.messages.empty() || box.failure.has_value(); });
  return std::move(*pop_locked(box));
}

void SocketTransport::abort() {
  for (int a = 0; a < kNumRoles; ++a) {
    for (int b = 0; b < kNumRoles; ++b) {
      if (fd_[a][b] >= 0) ::shutdown(fd_[a][b], SHUT_RDWR);
    }
  }
}

void SocketTransport::disconnect(Role a, Role b) {
  ::shutdown(fd_[idx(a)][idx(b)], SHUT_RDWR);
  ::shutdown(fd_[idx(b)][idx(a)], SHUT_RDWR);
}

}  // namespace fedvgcn
