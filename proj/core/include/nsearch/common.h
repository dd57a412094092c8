// Copyright 2026 The nsearch Authors
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

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nsearch {

using ItemId = std::uint32_t;
using CategoryId = std::uint32_t;
using UserId = std::int64_t;

// Base of every error thrown by the library. Callers that only care about
// "did it fail" catch this; the subclasses let the CLI map failures onto
// exit codes and let tests assert on the failure kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input (event logs, config files). Carries the 1-based line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

// Binary artifact problems: bad magic, unsupported version.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Binary artifact ended before the declared payload.
class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Decoded value outside its legal range (offsets, ids, levels).
class RangeError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class OutOfVocabularyError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition (stale tape, invalid enter point).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace nsearch
