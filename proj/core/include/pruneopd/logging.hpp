// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace pruneopd {

// Reads PRUNE_OPD_LOG (trace, debug, info, warn, error, off); default warn.
void configure_logging_from_env();

}  // namespace pruneopd
