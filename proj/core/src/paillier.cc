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

#include "fedvgcn/paillier.h"

#include <cmath>
#include <string>

#include "fedvgcn/error.h"

namespace fedvgcn {
namespace {

BigInt random_prime(unsigned bits, EntropySource& rng) {
  for (;;) {
    BigInt c = rng.random_bits(bits);
    mpz_setbit(c.get_mpz_t(), bits - 1);
    mpz_setbit(c.get_mpz_t(), bits - 2);  // keeps p*q at full length
    mpz_setbit(c.get_mpz_t(), 0);
    BigInt p;
    mpz_nextprime(p.get_mpz_t(), c.get_mpz_t());
    if (mpz_sizeinbase(p.get_mpz_t(), 2) == bits) return p;
  }
}

KeyId derive_key_id(const BigInt& n) {
  std::vector<std::uint64_t> limbs((mpz_sizeinbase(n.get_mpz_t(), 2) + 63) / 64);
  std::size_t count = 0;
  mpz_export(limbs.data(), &count, -1, sizeof(std::uint64_t), 0, 0,
             n.get_mpz_t());
  std::uint64_t h = mix_words({count});
  for (std::size_t i = 0; i < count; ++i) h = mix_words({h, limbs[i]});
  return h;
}

BigInt powm(const BigInt& base, const BigInt& exp, const BigInt& mod) {
  BigInt out;
  mpz_powm(out.get_mpz_t(), base.get_mpz_t(), exp.get_mpz_t(), mod.get_mpz_t());
  return out;
}

BigInt invert(const BigInt& x, const BigInt& mod) {
  BigInt out;
  if (mpz_invert(out.get_mpz_t(), x.get_mpz_t(), mod.get_mpz_t()) == 0) {
    throw CryptoError("value is not invertible modulo n^2");
  }
  return out;
}

// L_p(x) = (x - 1) / p, then times h mod p.
BigInt crt_half(const BigInt& c, const BigInt& prime, const BigInt& prime2,
                const BigInt& h) {
  BigInt u = powm(c % prime2, prime - 1, prime2);
  u -= 1;
  mpz_divexact(u.get_mpz_t(), u.get_mpz_t(), prime.get_mpz_t());
  u *= h;
  u %= prime;
  return u;
}

void check_key(KeyId expected, KeyId got) {
  if (expected != got) throw CryptoError("ciphertext key_id does not match key");
}

void check_plaintext(const PublicKey& pk, const BigInt& m) {
  if (m < 0 || m >= pk.n) throw CryptoError("plaintext outside [0, n)");
}

BigInt encode_plain(const PublicKey& pk, const BigInt& m) {
  // (n + 1)^m = 1 + m n  (mod n^2)
  BigInt gm = m * pk.n;
  gm += 1;
  gm %= pk.n2;
  return gm;
}

}  // namespace

unsigned PublicKey::bits() const {
  return static_cast<unsigned>(mpz_sizeinbase(n.get_mpz_t(), 2));
}

std::pair<PublicKey, SecretKey> keygen(unsigned bits, EntropySource& rng,
                                       KeyPolicy policy) {
  const bool allowed =
      bits == 1024 || bits == 2048 || (bits == 512 && policy == KeyPolicy::kTest);
  if (!allowed) {
    throw ConfigError("unsupported key size " + std::to_string(bits) +
                      (bits == 512 ? " outside test mode" : ""));
  }
  BigInt p, q, n;
  do {
    p = random_prime(bits / 2, rng);
    q = random_prime(bits / 2, rng);
    n = p * q;
  } while (p == q || mpz_sizeinbase(n.get_mpz_t(), 2) != bits);

  PublicKey pk;
  pk.n = n;
  pk.g = n + 1;
  pk.n2 = n * n;
  pk.key_id = derive_key_id(n);

  SecretKey sk;
  BigInt pm1 = p - 1, qm1 = q - 1;
  mpz_lcm(sk.lambda.get_mpz_t(), pm1.get_mpz_t(), qm1.get_mpz_t());
  sk.mu = invert(sk.lambda % n, n);
  sk.key_id = pk.key_id;
  sk.p = p;
  sk.q = q;
  sk.p2 = p * p;
  sk.q2 = q * q;
  sk.n = n;
  sk.n2 = pk.n2;
  auto h_of = [&](const BigInt& prime, const BigInt& prime2) {
    BigInt u = powm(pk.g % prime2, prime - 1, prime2) - 1;
    mpz_divexact(u.get_mpz_t(), u.get_mpz_t(), prime.get_mpz_t());
    return invert(u % prime, prime);
  };
  sk.hp = h_of(p, sk.p2);
  sk.hq = h_of(q, sk.q2);
  sk.q_inv_p = invert(q % p, p);
  return {std::move(pk), std::move(sk)};
}

Ciphertext encrypt(const PublicKey& pk, const BigInt& m, EntropySource& rng,
                   std::uint8_t scale) {
  check_plaintext(pk, m);
  BigInt r;
  for (;;) {
    r = rng.below(pk.n);
    if (r == 0) continue;
    BigInt g;
    mpz_gcd(g.get_mpz_t(), r.get_mpz_t(), pk.n.get_mpz_t());
    if (g == 1) break;
  }
  BigInt c = encode_plain(pk, m) * powm(r, pk.n, pk.n2);
  c %= pk.n2;
  return {std::move(c), pk.key_id, scale, 0};
}

BigInt decrypt(const SecretKey& sk, const Ciphertext& ct) {
  check_key(sk.key_id, ct.key_id);
  const BigInt mp = crt_half(ct.value, sk.p, sk.p2, sk.hp);
  const BigInt mq = crt_half(ct.value, sk.q, sk.q2, sk.hq);
  BigInt t = (mp - mq) * sk.q_inv_p;
  mpz_mod(t.get_mpz_t(), t.get_mpz_t(), sk.p.get_mpz_t());
  return mq + sk.q * t;
}

BigInt decrypt_textbook(const SecretKey& sk, const Ciphertext& ct) {
  check_key(sk.key_id, ct.key_id);
  BigInt u = powm(ct.value, sk.lambda, sk.n2) - 1;
  mpz_divexact(u.get_mpz_t(), u.get_mpz_t(), sk.n.get_mpz_t());
  u *= sk.mu;
  u %= sk.n;
  return u;
}

Ciphertext add_ct(const PublicKey& pk, const Ciphertext& x,
                  const Ciphertext& y) {
  Ciphertext out = x;
  add_into(pk, out, y);
  return out;
}

void add_into(const PublicKey& pk, Ciphertext& acc, const Ciphertext& x) {
  check_key(pk.key_id, acc.key_id);
  check_key(pk.key_id, x.key_id);
  if (acc.scale != x.scale) {
    throw CryptoError("adding ciphertexts with different fixed-point scales");
  }
  acc.value *= x.value;
  acc.value %= pk.n2;
  acc.depth = std::max(acc.depth, x.depth);
}

Ciphertext mul_scalar(const PublicKey& pk, const Ciphertext& x, const BigInt& s,
                      std::uint8_t scalar_scale) {
  check_key(pk.key_id, x.key_id);
  if (s < 0 || s >= pk.n) throw CryptoError("scalar outside [0, n)");
  if (x.depth >= kMaxScalarDepth) {
    throw CryptoError("second scalar product on one ciphertext");
  }
  Ciphertext out;
  out.key_id = x.key_id;
  out.scale = static_cast<std::uint8_t>(x.scale + scalar_scale);
  out.depth = static_cast<std::uint8_t>(x.depth + 1);
  // Negative encodings sit in the upper half; a short exponent on the
  // inverse is much cheaper than a full-width one.
  if (s > (pk.n >> 1)) {
    out.value = powm(invert(x.value, pk.n2), pk.n - s, pk.n2);
  } else {
    out.value = powm(x.value, s, pk.n2);
  }
  return out;
}

Ciphertext add_plain(const PublicKey& pk, const Ciphertext& x, const BigInt& m) {
  check_key(pk.key_id, x.key_id);
  check_plaintext(pk, m);
  Ciphertext out = x;
  out.value *= encode_plain(pk, m);
  out.value %= pk.n2;
  return out;
}

Ciphertext zero_ct(const PublicKey& pk, std::uint8_t scale) {
  return {BigInt(1), pk.key_id, scale, 0};
}

FastEncryptor::FastEncryptor(const PublicKey& pk, EntropySource& rng,
                             unsigned exponent_bits, unsigned window)
    : pk_(pk), exponent_bits_(exponent_bits), window_(window) {
  if (window == 0 || window > 12 || exponent_bits == 0) {
    throw ConfigError("fast encryptor needs 1..12 window bits");
  }
  const Ciphertext seed = fedvgcn::encrypt(pk, BigInt(0), rng);  // r0^n
  const unsigned rows = (exponent_bits + window - 1) / window;
  const std::size_t cols = std::size_t{1} << window;
  table_.assign(rows, std::vector<BigInt>(cols));
  BigInt base = seed.value;
  for (unsigned i = 0; i < rows; ++i) {
    table_[i][0] = 1;
    for (std::size_t j = 1; j < cols; ++j) {
      table_[i][j] = table_[i][j - 1] * base;
      table_[i][j] %= pk_.n2;
    }
    // Next row base is base^(2^window).
    base = table_[i][cols - 1] * base;
    base %= pk_.n2;
  }
}

Ciphertext FastEncryptor::encrypt(const BigInt& m, EntropySource& rng,
                                  std::uint8_t scale) const {
  check_plaintext(pk_, m);
  BigInt c = encode_plain(pk_, m);
  const std::uint64_t mask = (std::uint64_t{1} << window_) - 1;
  std::uint64_t word = 0;
  unsigned avail = 0;
  for (const auto& row : table_) {
    if (avail < window_) {
      word = rng.next_u64();
      avail = 64;
    }
    const std::uint64_t digit = word & mask;
    word >>= window_;
    avail -= window_;
    if (digit) {
      c *= row[digit];
      c %= pk_.n2;
    }
  }
  return {std::move(c), pk_.key_id, scale, 0};
}

FixedPointCodec::FixedPointCodec(BigInt modulus, int frac_bits)
    : modulus_(std::move(modulus)), frac_bits_(frac_bits) {
  if (frac_bits < 1 || frac_bits > 64) {
    throw ConfigError("frac_bits must be in [1, 64]");
  }
  if (modulus_ <= 0) throw ConfigError("codec modulus must be positive");
  half_ = modulus_ >> 1;
  long exp = 0;
  const double mant = mpz_get_d_2exp(&exp, modulus_.get_mpz_t());
  headroom_ = std::ldexp(mant, static_cast<int>(exp) - frac_bits_ - 2);
}

BigInt FixedPointCodec::encode(double v, int scale) const {
  if (!std::isfinite(v)) throw CryptoError("cannot encode a non-finite value");
  const double scaled = std::nearbyint(std::ldexp(v, frac_bits_ * scale));
  BigInt r;
  mpz_set_d(r.get_mpz_t(), scaled);
  if (4 * abs(r) >= modulus_) {
    throw CryptoError("value " + std::to_string(v) +
                      " exceeds fixed-point headroom");
  }
  if (r < 0) r += modulus_;
  return r;
}

BigInt FixedPointCodec::to_signed(const BigInt& m) const {
  BigInt r = m % modulus_;
  if (r < 0) r += modulus_;
  if (r > half_) r -= modulus_;
  return r;
}

double FixedPointCodec::decode(const BigInt& m, int scale) const {
  const BigInt s = to_signed(m);
  long exp = 0;
  const double mant = mpz_get_d_2exp(&exp, s.get_mpz_t());
  return std::ldexp(mant, static_cast<int>(exp) - frac_bits_ * scale);
}

BigInt FixedPointCodec::rescale_after_product(const BigInt& m) const {
  BigInt s = to_signed(m);
  const bool neg = s < 0;
  if (neg) s = -s;
  s += BigInt(1) << (frac_bits_ - 1);
  s >>= frac_bits_;
  if (neg) s = modulus_ - s;
  if (s == modulus_) s = 0;
  return s;
}

SlotPacker::SlotPacker(BigInt modulus, unsigned slot_bits)
    : modulus_(std::move(modulus)), bits_(slot_bits) {
  if (slot_bits < 2) throw ConfigError("slot width must be at least 2 bits");
  half_ = modulus_ >> 1;
  // The packed integer must stay inside (-n/2, n/2).
  const std::size_t usable = mpz_sizeinbase(modulus_.get_mpz_t(), 2) - 2;
  slots_ = usable / slot_bits;
  if (slots_ == 0) throw ConfigError("modulus too small for one slot");
}

BigInt SlotPacker::pack(std::span<const BigInt> values) const {
  if (values.size() > slots_) throw CryptoError("too many values for one plaintext");
  const BigInt limit = BigInt(1) << (bits_ - 1);
  BigInt acc = 0;
  for (std::size_t k = values.size(); k-- > 0;) {
    if (abs(values[k]) >= limit) throw CryptoError("value exceeds its slot width");
    acc <<= bits_;
    acc += values[k];
  }
  acc %= modulus_;
  if (acc < 0) acc += modulus_;
  return acc;
}

std::vector<BigInt> SlotPacker::unpack(const BigInt& m, std::size_t count) const {
  if (count > slots_) throw CryptoError("too many slots requested");
  BigInt s = m % modulus_;
  if (s < 0) s += modulus_;
  if (s > half_) s -= modulus_;
  const BigInt full = BigInt(1) << bits_;
  const BigInt limit = BigInt(1) << (bits_ - 1);
  std::vector<BigInt> out;
  out.reserve(count);
  BigInt v;
  for (std::size_t k = 0; k < count; ++k) {
    mpz_fdiv_r_2exp(v.get_mpz_t(), s.get_mpz_t(), bits_);
    if (v >= limit) v -= full;
    s -= v;
    mpz_fdiv_q_2exp(s.get_mpz_t(), s.get_mpz_t(), bits_);
    out.push_back(v);
  }
  if (s != 0) throw CryptoError("packed slot overflow");
  return out;
}

}  // namespace fedvgcn
