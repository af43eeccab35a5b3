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

// Message schema shared by the three parties and its byte encoding.
//
// Frame: "FVG1" | session_id(8) | round(4) | sender_role(1) | tag(1) |
// payload_len(4) | payload. Integers are big-endian; reals are little-endian
// IEEE doubles. A ciphertext block is rows(4) cols(4) scale(1) depth(1)
// key_id(8) followed by count(4) and length-prefixed big-endian integers.

#ifndef FEDVGCN_WIRE_H_
#define FEDVGCN_WIRE_H_

#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "fedvgcn/paillier.h"

namespace fedvgcn {

enum class Role : std::uint8_t { kPassive = 0, kActive = 1, kServer = 2 };
inline constexpr int kNumRoles = 3;

std::string_view role_name(Role r);

enum class GradTarget : std::uint8_t { kWeights = 0, kInput = 1 };

// Row-major block of ciphertexts sharing one key, scale and depth bound.
// A rows x cols matrix under encryption. With slots > 1 each row is packed
// into ceil(cols / slots) ciphertexts of slot_bits-wide slots.
struct CtBlock {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<Ciphertext> cts;
  std::uint32_t slots = 1;
  std::uint32_t slot_bits = 0;

  std::size_t size() const { return cts.size(); }
  std::size_t per_row() const { return slots <= 1 ? cols : (cols + slots - 1) / slots; }
  bool packed() const { return slots > 1; }
  bool operator==(const CtBlock&) const = default;
};

// Row-major block of plaintext reals.
struct RealBlock {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<double> values;

  bool operator==(const RealBlock&) const = default;
};

struct PubKeyDist {
  BigInt n;
  KeyId key_id = 0;
  bool operator==(const PubKeyDist&) const = default;
};

// Per-node edge counts N_i, sent in the clear.
struct NeighborCount {
  std::vector<std::uint32_t> counts;
  bool operator==(const NeighborCount&) const = default;
};

// [[w h]] for one layer, N x m.
struct EncShare {
  std::uint32_t layer = 0;
  Role role = Role::kPassive;
  CtBlock block;
  bool operator==(const EncShare&) const = default;
};

// Decrypted pre-activation sum z, N x m.
struct PlainSum {
  std::uint32_t layer = 0;
  RealBlock sum;
  bool operator==(const PlainSum&) const = default;
};

// [[L_A]] from A, or the assembled [[L]] from B.
struct EncPartialLoss {
  std::uint32_t layer = 0;
  Role role = Role::kPassive;
  CtBlock block;
  bool operator==(const EncPartialLoss&) const = default;
};

struct MaskedEncGrad {
  std::uint32_t layer = 0;
  Role role = Role::kPassive;
  GradTarget target = GradTarget::kWeights;
  CtBlock block;
  bool operator==(const MaskedEncGrad&) const = default;
};

struct MaskedPlainGrad {
  std::uint32_t layer = 0;
  Role role = Role::kPassive;
  GradTarget target = GradTarget::kWeights;
  RealBlock grad;
  bool operator==(const MaskedPlainGrad&) const = default;
};

// Error signal for the passive party: [[delta]] and [[norm * delta]].
struct EncError {
  std::uint32_t layer = 0;
  CtBlock delta;
  CtBlock norm_delta;
  bool operator==(const EncError&) const = default;
};

// A's contribution to the gradient of the layer input, N x in.
struct EncInputGrad {
  std::uint32_t layer = 0;
  CtBlock block;
  bool operator==(const EncInputGrad&) const = default;
};

using Payload = std::variant<PubKeyDist, NeighborCount, EncShare, PlainSum,
                             EncPartialLoss, MaskedEncGrad, MaskedPlainGrad,
                             EncError, EncInputGrad>;

// Wire tag of a payload; index + 1 so that zero never appears on the wire.
std::uint8_t payload_tag(const Payload& p);
std::string_view payload_name(const Payload& p);

struct Message {
  std::uint64_t session_id = 0;
  std::uint32_t round = 0;
  Role sender = Role::kPassive;
  Payload payload;

  bool operator==(const Message&) const = default;
};

inline constexpr std::size_t kFrameHeaderSize = 4 + 8 + 4 + 1 + 1 + 4;
inline constexpr std::uint32_t kMaxPayloadSize = 1u << 31;

std::vector<std::uint8_t> serialize(const Message& m);
// Throws ProtocolError on malformed input, including trailing bytes.
Message deserialize(std::span<const std::uint8_t> frame);
// Payload length announced by a frame header; validates the magic.
std::uint32_t frame_payload_size(std::span<const std::uint8_t> header);

}  // namespace fedvgcn

#endif  // FEDVGCN_WIRE_H_
