// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Kept apart from main() so tests can drive it.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace distillkit::cli {

inline constexpr int kOk = 0;
inline constexpr int kUsageError = 1;
inline constexpr int kRuntimeError = 2;

/// Runs one invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Applies "a.b.c=value" to `doc`, creating intermediate objects. The value
/// is parsed as JSON when it parses, otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

}  // namespace distillkit::cli
