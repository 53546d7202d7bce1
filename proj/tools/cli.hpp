#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hybridivf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line (without the program name). Results go to `out`,
/// logs and error messages to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Worker count when --parallelism is absent: HYBRIDIVF_THREADS if set,
/// otherwise the number of hardware threads.
std::size_t default_parallelism();

/// CRC-32 of a whole file, as 8 lowercase hex digits.
std::string file_crc32(const std::string& path);

}  // namespace hybridivf::cli
