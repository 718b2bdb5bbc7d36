// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#include "pruneopd/error.hpp"

namespace pruneopd {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidConfig: return "invalid config";
    case ErrorKind::InvalidRecord: return "invalid record";
    case ErrorKind::EmptyInput: return "empty input";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

}  // namespace pruneopd
