#pragma once
#include <stdexcept>
#include <string>
#include <vector>

namespace molr {

// exit-code contract: 0 success, 1 usage error, 2 data error, 3 runtime failure
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitRuntime = 3;

// bad flags, unknown subcommands, unknown config keys
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// missing or malformed input files / records
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// args exclude the program name, e.g. {"train", "--config=c.json"};
// every run writes resolved_config.json next to its artifacts
int dispatch(const std::vector<std::string>& args);
int dispatch(int argc, char** argv);

} // namespace molr
