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

// Entropy sources. Every randomized primitive takes one explicitly so no
// hidden generator is shared between threads.

#ifndef FEDVGCN_ENTROPY_H_
#define FEDVGCN_ENTROPY_H_

#include <cstdint>
#include <random>
#include <span>

#include <gmpxx.h>

namespace fedvgcn {

class EntropySource {
 public:
  virtual ~EntropySource() = default;
  virtual std::uint64_t next_u64() = 0;

  void fill(std::span<std::uint8_t> out);
  // Uniform integer with exactly `bits` random bits (top bit may be zero).
  mpz_class random_bits(unsigned bits);
  // Uniform in [0, bound) by rejection sampling.
  mpz_class below(const mpz_class& bound);
  // Uniform real in [0, 1).
  double uniform01();
};

// Operating-system randomness via std::random_device.
class SystemEntropy final : public EntropySource {
 public:
  std::uint64_t next_u64() override;

 private:
  std::random_device dev_;
};

// Reproducible stream for tests and seeded experiments. Not for secrets.
class SeededEntropy final : public EntropySource {
 public:
  explicit SeededEntropy(std::uint64_t seed) : state_(seed) {}
  SeededEntropy(std::uint64_t seed, std::uint64_t stream);
  std::uint64_t next_u64() override;

 private:
  std::uint64_t state_;
};

std::uint64_t splitmix64(std::uint64_t x);
// Order-sensitive hash of a few words; used to derive independent streams.
std::uint64_t mix_words(std::initializer_list<std::uint64_t> words);

}  // namespace fedvgcn

#endif  // FEDVGCN_ENTROPY_H_
