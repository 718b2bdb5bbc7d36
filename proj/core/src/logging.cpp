// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#include "pruneopd/logging.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace pruneopd {

void configure_logging_from_env() {
  static const auto logger = [] {
    auto l = spdlog::stderr_color_mt("pruneopd");
    spdlog::set_default_logger(l);
    return l;
  }();
  auto level = spdlog::level::warn;
  if (const char* env = std::getenv("PRUNE_OPD_LOG"); env != nullptr && *env != '\0') {
    level = spdlog::level::from_str(env);
  }
  logger->set_level(level);
}

}  // namespace pruneopd
