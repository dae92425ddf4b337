#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "bisenet/error.hpp"

namespace bisenet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

int exit_code(ErrorKind kind);

// "error: <kind>: <message>[ (at byte <offset>)]"
std::string error_line(const Error& e);

int run(int argc, char** argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bisenet::cli
