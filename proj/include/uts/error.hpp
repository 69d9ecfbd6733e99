// Copyright (c) 2026 The utispeech Authors
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

#include <stdexcept>
#include <string>

namespace uts {

// Base of every error raised by the library. Subclasses name the failure
// class so callers (and the CLI) can map them to exit codes or HTTP status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedFileError : public Error { using Error::Error; };
class ConfigurationError : public Error { using Error::Error; };
class InsufficientDataError : public Error { using Error::Error; };
class NumericInputError : public Error { using Error::Error; };
class InsufficientAudioError : public Error { using Error::Error; };
class DegenerateStatsError : public Error { using Error::Error; };
class IncompatibleInputError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class BackendMissingError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class NotFoundError : public Error { using Error::Error; };
class ConflictError : public Error { using Error::Error; };
class ManifestError : public Error { using Error::Error; };
class EmptyReportError : public Error { using Error::Error; };
class PreconditionError : public Error { using Error::Error; };

}  // namespace uts
