// Copyright 2026 The StageRefine Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef STAGEREFINE_ERRORS_H_
#define STAGEREFINE_ERRORS_H_

#include <stdexcept>
#include <string>

namespace stagerefine {

// Root of every error thrown by the library. The CLI maps ConfigError to
// exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values, unknown keys, unknown dataset variants.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing or malformed input files. The message names the file.
class IngestionError : public Error {
 public:
  using Error::Error;
};

// Inconsistent records: mismatched lengths, duplicate stage snapshots.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// A caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class AugmentationError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf in a loss, gradient or parameter.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Checkpoint written by an incompatible format version or architecture.
class VersioningError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Wraps an error raised inside one pipeline phase and carries its tag
// ("pretrain", "warmup", "iter3", ...).
class PhaseError : public Error {
 public:
  PhaseError(std::string phase, const std::string& what)
      : Error("[" + phase + "] " + what), phase_(std::move(phase)) {}
  const std::string& phase() const { return phase_; }

 private:
  std::string phase_;
};

}  // namespace stagerefine

#endif  // STAGEREFINE_ERRORS_H_
