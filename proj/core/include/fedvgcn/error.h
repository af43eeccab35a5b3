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

#ifndef FEDVGCN_ERROR_H_
#define FEDVGCN_ERROR_H_

#include <stdexcept>
#include <string>

namespace fedvgcn {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid parameters or configuration (bad degree, ratio, key size, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Key mismatch, plaintext out of range, codec overflow, product depth.
class CryptoError : public Error {
 public:
  using Error::Error;
};

// Out-of-order rounds, missing shares, transport failures, mask reuse.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedvgcn

#endif  // FEDVGCN_ERROR_H_
