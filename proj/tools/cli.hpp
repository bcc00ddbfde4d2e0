// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace calcseg {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 2;  // bad config, contract or shape violation
inline constexpr int kExitIo = 3;       // unreadable or malformed files
inline constexpr int kExitNumeric = 4;  // non-finite values, failed gradient checks

/// Runs one subcommand. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace calcseg
