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

#include "fedvgcn/wire.h"

#include <algorithm>
#include <cstring>

#include "fedvgcn/error.h"

namespace fedvgcn {
namespace {

constexpr char kMagic[4] = {'F', 'V', 'G', '1'};

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 3; i >= 0; --i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 7; i >= 0; --i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void big(const BigInt& v) {
    if (sgn(v) < 0) throw ProtocolError("negative integer on the wire");
    const std::size_t len = (mpz_sizeinbase(v.get_mpz_t(), 2) + 7) / 8;
    const std::size_t n = sgn(v) == 0 ? 0 : len;
    u32(static_cast<std::uint32_t>(n));
    const std::size_t at = out_.size();
    out_.resize(at + n);
    if (n) mpz_export(out_.data() + at, nullptr, 1, 1, 1, 0, v.get_mpz_t());
  }
  void ct_block(const CtBlock& b) {
    if (b.slots == 0 || b.cts.size() != std::size_t(b.rows) * b.per_row()) {
      throw ProtocolError("ciphertext block shape does not match its size");
    }
    std::uint8_t scale = 1, depth = 0;
    KeyId key = 0;
    if (!b.cts.empty()) {
      scale = b.cts.front().scale;
      key = b.cts.front().key_id;
    }
    for (const auto& c : b.cts) {
      if (c.scale != scale || c.key_id != key) {
        throw ProtocolError("ciphertext block mixes scales or keys");
      }
      depth = std::max(depth, c.depth);
    }
    u32(b.rows);
    u32(b.cols);
    u32(b.slots);
    u32(b.slot_bits);
    u8(scale);
    u8(depth);
    u64(key);
    u32(static_cast<std::uint32_t>(b.cts.size()));
    for (const auto& c : b.cts) big(c.value);
  }
  void real_block(const RealBlock& b) {
    if (b.values.size() != std::size_t(b.rows) * b.cols) {
      throw ProtocolError("real block shape does not match its size");
    }
    u32(b.rows);
    u32(b.cols);
    for (double v : b.values) f64(v);
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > in_.size() - pos_) throw ProtocolError("truncated message");
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (auto b : s) v = (v << 8) | b;
    return v;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (auto b : s) v = (v << 8) | b;
    return v;
  }
  double f64() {
    auto s = take(8);
    std::uint64_t u = 0;
    for (int i = 7; i >= 0; --i) u = (u << 8) | s[i];
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  BigInt big() {
    const std::uint32_t n = u32();
    auto s = take(n);
    BigInt v;
    if (n) mpz_import(v.get_mpz_t(), n, 1, 1, 1, 0, s.data());
    return v;
  }
  Role role() {
    const auto r = u8();
    if (r >= kNumRoles) throw ProtocolError("unknown role on the wire");
    return static_cast<Role>(r);
  }
  GradTarget target() {
    const auto t = u8();
    if (t > 1) throw ProtocolError("unknown gradient target on the wire");
    return static_cast<GradTarget>(t);
  }
  CtBlock ct_block() {
    CtBlock b;
    b.rows = u32();
    b.cols = u32();
    b.slots = u32();
    b.slot_bits = u32();
    if (b.slots == 0) throw ProtocolError("ciphertext block has zero slots");
    const auto scale = u8();
    const auto depth = u8();
    const auto key = u64();
    const auto count = u32();
    if (count != std::uint64_t(b.rows) * b.per_row()) {
      throw ProtocolError("ciphertext block shape does not match its count");
    }
    if (count > remaining() / 4) throw ProtocolError("truncated message");
    b.cts.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) b.cts.push_back({big(), key, scale, depth});
    return b;
  }
  RealBlock real_block() {
    RealBlock b;
    b.rows = u32();
    b.cols = u32();
    const std::uint64_t count = std::uint64_t(b.rows) * b.cols;
    if (count > remaining() / 8) throw ProtocolError("truncated message");
    b.values.resize(count);
    for (auto& v : b.values) v = f64();
    return b;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

struct PayloadWriter {
  Writer& w;
  void operator()(const PubKeyDist& p) {
    w.big(p.n);
    w.u64(p.key_id);
  }
  void operator()(const NeighborCount& p) {
    w.u32(static_cast<std::uint32_t>(p.counts.size()));
    for (auto c : p.counts) w.u32(c);
  }
  void operator()(const EncShare& p) {
    w.u32(p.layer);
    w.u8(static_cast<std::uint8_t>(p.role));
    w.ct_block(p.block);
  }
  void operator()(const PlainSum& p) {
    w.u32(p.layer);
    w.real_block(p.sum);
  }
  void operator()(const EncPartialLoss& p) {
    w.u32(p.layer);
    w.u8(static_cast<std::uint8_t>(p.role));
    w.ct_block(p.block);
  }
  void operator()(const MaskedEncGrad& p) {
    w.u32(p.layer);
    w.u8(static_cast<std::uint8_t>(p.role));
    w.u8(static_cast<std::uint8_t>(p.target));
    w.ct_block(p.block);
  }
  void operator()(const MaskedPlainGrad& p) {
    w.u32(p.layer);
    w.u8(static_cast<std::uint8_t>(p.role));
    w.u8(static_cast<std::uint8_t>(p.target));
    w.real_block(p.grad);
  }
  void operator()(const EncError& p) {
    w.u32(p.layer);
    w.ct_block(p.delta);
    w.ct_block(p.norm_delta);
  }
  void operator()(const EncInputGrad& p) {
    w.u32(p.layer);
    w.ct_block(p.block);
  }
};

Payload read_payload(std::uint8_t tag, Reader& r) {
  switch (tag) {
    case 1: {
      PubKeyDist p;
      p.n = r.big();
      p.key_id = r.u64();
      return p;
    }
    case 2: {
      NeighborCount p;
      const auto n = r.u32();
      if (n > r.remaining() / 4) throw ProtocolError("truncated message");
      p.counts.resize(n);
      for (auto& c : p.counts) c = r.u32();
      return p;
    }
    case 3: {
      EncShare p;
      p.layer = r.u32();
      p.role = r.role();
      p.block = r.ct_block();
      return p;
    }
    case 4: {
      PlainSum p;
      p.layer = r.u32();
      p.sum = r.real_block();
      return p;
    }
    case 5: {
      EncPartialLoss p;
      p.layer = r.u32();
      p.role = r.role();
      p.block = r.ct_block();
      return p;
    }
    case 6: {
      MaskedEncGrad p;
      p.layer = r.u32();
      p.role = r.role();
      p.target = r.target();
      p.block = r.ct_block();
      return p;
    }
    case 7: {
      MaskedPlainGrad p;
      p.layer = r.u32();
      p.role = r.role();
      p.target = r.target();
      p.grad = r.real_block();
      return p;
    }
    case 8: {
      EncError p;
      p.layer = r.u32();
      p.delta = r.ct_block();
      p.norm_delta = r.ct_block();
      return p;
    }
    case 9: {
      EncInputGrad p;
      p.layer = r.u32();
      p.block = r.ct_block();
      return p;
    }
    default:
      throw ProtocolError("unknown message tag " + std::to_string(tag));
  }
}

}  // namespace

std::string_view role_name(Role r) {
  switch (r) {
    case Role::kPassive: return "passive";
    case Role::kActive: return "active";
    case Role::kServer: return "server";
  }
  return "unknown";
}

std::uint8_t payload_tag(const Payload& p) {
  return static_cast<std::uint8_t>(p.index() + 1);
}

std::string_view payload_name(const Payload& p) {
  static constexpr std::string_view kNames[] = {
      "PubKeyDist",    "NeighborCount",   "EncShare", "PlainSum",    "EncPartialLoss",
      "MaskedEncGrad", "MaskedPlainGrad", "EncError", "EncInputGrad"};
  return kNames[p.index()];
}

std::vector<std::uint8_t> serialize(const Message& m) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  Writer w(out);
  w.u64(m.session_id);
  w.u32(m.round);
  w.u8(static_cast<std::uint8_t>(m.sender));
  w.u8(payload_tag(m.payload));
  const std::size_t len_at = out.size();
  w.u32(0);
  std::visit(PayloadWriter{w}, m.payload);
  const std::size_t len = out.size() - kFrameHeaderSize;
  if (len >= kMaxPayloadSize) throw ProtocolError("message too large to frame");
  for (int i = 0; i < 4; ++i) out[len_at + i] = static_cast<std::uint8_t>(len >> (8 * (3 - i)));
  return out;
}

std::uint32_t frame_payload_size(std::span<const std::uint8_t> header) {
  if (header.size() < kFrameHeaderSize) throw ProtocolError("short frame header");
  if (!std::equal(kMagic, kMagic + 4, header.begin())) throw ProtocolError("bad frame magic");
  Reader r(header.subspan(kFrameHeaderSize - 4, 4));
  const auto len = r.u32();
  if (len >= kMaxPayloadSize) throw ProtocolError("frame payload too large");
  return len;
}

Message deserialize(std::span<const std::uint8_t> frame) {
  const auto len = frame_payload_size(frame);
  if (frame.size() != kFrameHeaderSize + len) {
    throw ProtocolError("frame length does not match its header");
  }
  Reader r(frame.subspan(4));
  Message m;
  m.session_id = r.u64();
  m.round = r.u32();
  m.sender = r.role();
  const auto tag = r.u8();
  r.u32();
  m.payload = read_payload(tag, r);
  if (r.remaining() != 0) throw ProtocolError("trailing bytes after payload");
  return m;
}

}  // namespace fedvgcn
