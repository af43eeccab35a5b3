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

#include "fedvgcn/entropy.h"

#include <cstring>
#include <vector>

namespace fedvgcn {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_words(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (std::uint64_t w : words) h = splitmix64(h ^ splitmix64(w));
  return h;
}

void EntropySource::fill(std::span<std::uint8_t> out) {
  std::size_t i = 0;
  while (i < out.size()) {
    const std::uint64_t w = next_u64();
    const std::size_t take = std::min<std::size_t>(8, out.size() - i);
    std::memcpy(out.data() + i, &w, take);
    i += take;
  }
}

mpz_class EntropySource::random_bits(unsigned bits) {
  if (bits == 0) return 0;
  const std::size_t words = (bits + 63) / 64;
  std::vector<std::uint64_t> buf(words);
  for (auto& w : buf) w = next_u64();
  const unsigned spare = static_cast<unsigned>(words * 64 - bits);
  if (spare) buf.back() >>= spare;
  mpz_class out;
  // Least significant word first.
  mpz_import(out.get_mpz_t(), words, -1, sizeof(std::uint64_t), 0, 0,
             buf.data());
  return out;
}

mpz_class EntropySource::below(const mpz_class& bound) {
  const unsigned bits = static_cast<unsigned>(mpz_sizeinbase(bound.get_mpz_t(), 2));
  for (;;) {
    mpz_class r = random_bits(bits);
    if (r < bound) return r;
  }
}

double EntropySource::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t SystemEntropy::next_u64() {
  return (static_cast<std::uint64_t>(dev_()) << 32) ^ dev_();
}

SeededEntropy::SeededEntropy(std::uint64_t seed, std::uint64_t stream)
    : state_(mix_words({seed, stream})) {}

std::uint64_t SeededEntropy::next_u64() {
  state_ += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace fedvgcn
