#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace misbench {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// `args` excludes the program name. Usage errors print the synopsis to
// `err` and return kExitUsage; library errors return kExitRuntime.
int cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli(int argc, char** argv);

}  // namespace misbench
