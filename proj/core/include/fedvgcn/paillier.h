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

// Paillier with g = n + 1 plus the signed fixed-point codec used to carry
// reals under encryption.

#ifndef FEDVGCN_PAILLIER_H_
#define FEDVGCN_PAILLIER_H_

#include <cstdint>
#include <memory>
#include <utility>
#include <span>
#include <vector>

#include <gmpxx.h>

#include "fedvgcn/entropy.h"

namespace fedvgcn {

using BigInt = mpz_class;
using KeyId = std::uint64_t;

enum class KeyPolicy { kProduction, kTest };

struct PublicKey {
  BigInt n;
  BigInt g;   // n + 1
  BigInt n2;  // n^2, cached
  KeyId key_id = 0;

  unsigned bits() const;
};

struct SecretKey {
  BigInt lambda;  // lcm(p-1, q-1)
  BigInt mu;      // lambda^-1 mod n
  KeyId key_id = 0;

  // CRT material; decrypt() uses it, decrypt_textbook() ignores it.
  BigInt p, q, p2, q2, hp, hq, q_inv_p;
  BigInt n, n2;
};

// `scale` counts how many factors of 2^frac_bits the plaintext carries and
// `depth` how many scalar products were applied since encryption.
struct Ciphertext {
  BigInt value;
  KeyId key_id = 0;
  std::uint8_t scale = 1;
  std::uint8_t depth = 0;

  bool operator==(const Ciphertext&) const = default;
};

inline constexpr int kMaxScalarDepth = 1;

// Supported sizes: 1024 and 2048; 512 only under KeyPolicy::kTest.
std::pair<PublicKey, SecretKey> keygen(unsigned bits, EntropySource& rng,
                                       KeyPolicy policy = KeyPolicy::kProduction);

// Textbook encryption with a fresh uniform r coprime to n.
Ciphertext encrypt(const PublicKey& pk, const BigInt& m, EntropySource& rng,
                   std::uint8_t scale = 1);

// CRT decryption.
BigInt decrypt(const SecretKey& sk, const Ciphertext& ct);
// L(c^lambda mod n^2) * mu mod n; slow path kept as an oracle.
BigInt decrypt_textbook(const SecretKey& sk, const Ciphertext& ct);

Ciphertext add_ct(const PublicKey& pk, const Ciphertext& x, const Ciphertext& y);
// Homomorphic multiply by s in [0, n). `scalar_scale` is the fixed-point
// scale of s (0 for a raw integer, 1 for an encoded real).
Ciphertext mul_scalar(const PublicKey& pk, const Ciphertext& x, const BigInt& s,
                      std::uint8_t scalar_scale = 1);
// Adds a plaintext m in [0, n) without re-randomizing: c * (1 + m n).
Ciphertext add_plain(const PublicKey& pk, const Ciphertext& x, const BigInt& m);
// In-place accumulate for hot loops: acc <- acc (+) x. Same checks as add_ct.
void add_into(const PublicKey& pk, Ciphertext& acc, const Ciphertext& x);
// Encryption of zero with r = 1; identity element for accumulation.
Ciphertext zero_ct(const PublicKey& pk, std::uint8_t scale = 1);

// Fixed-base encryptor: r^n is replaced by h^alpha where h = r0^n is drawn
// once and alpha has `exponent_bits` random bits. A windowed table over h
// makes each encryption a few dozen modular products.
class FastEncryptor {
 public:
  FastEncryptor(const PublicKey& pk, EntropySource& rng,
                unsigned exponent_bits = 256, unsigned window = 8);

  Ciphertext encrypt(const BigInt& m, EntropySource& rng,
                     std::uint8_t scale = 1) const;
  const PublicKey& public_key() const { return pk_; }

 private:
  PublicKey pk_;
  unsigned exponent_bits_;
  unsigned window_;
  std::vector<std::vector<BigInt>> table_;  // table_[i][j] = h^(j << (w i))
};

class FixedPointCodec {
 public:
  FixedPointCodec(BigInt modulus, int frac_bits = 32);

  int frac_bits() const { return frac_bits_; }
  const BigInt& modulus() const { return modulus_; }
  // Largest encodable magnitude: n / 2^(frac_bits + 2).
  double headroom() const { return headroom_; }

  // round(v * 2^(frac_bits * scale)) mod n.
  BigInt encode(double v, int scale = 1) const;
  double decode(const BigInt& m, int scale = 1) const;
  // Signed division by 2^frac_bits, rounding half away from zero.
  BigInt rescale_after_product(const BigInt& m) const;
  // Lift [0, n) to the signed range (-n/2, n/2].
  BigInt to_signed(const BigInt& m) const;

 private:
  BigInt modulus_;
  BigInt half_;
  int frac_bits_;
  double headroom_;
};

// Integer bits each slot keeps above the fixed-point fraction.
inline constexpr unsigned kSlotIntegerBits = 40;

// Several signed integers in one plaintext: slot k holds v_k * 2^(bits k).
// Ciphertext additions and a product with one common scalar act slotwise as
// long as every slot stays below 2^(bits - 1) in magnitude.
class SlotPacker {
 public:
  SlotPacker(BigInt modulus, unsigned slot_bits);

  // Slot width for fixed-point values at `scale`.
  static unsigned width_for(int frac_bits, int scale) {
    return static_cast<unsigned>(frac_bits * scale) + kSlotIntegerBits;
  }

  unsigned slot_bits() const { return bits_; }
  std::size_t slots() const { return slots_; }

  // Signed inputs, at most slots() of them; returns a residue mod n.
  BigInt pack(std::span<const BigInt> values) const;
  // Recovers `count` signed slots. Throws CryptoError when a slot overflowed.
  std::vector<BigInt> unpack(const BigInt& m, std::size_t count) const;

 private:
  BigInt modulus_;
  BigInt half_;
  unsigned bits_;
  std::size_t slots_;
};

}  // namespace fedvgcn

#endif  // FEDVGCN_PAILLIER_H_
