#pragma once

#include <chrono>
#include <string>
#include <vector>

namespace codesign {

struct LineExchange {
    bool launched = false;
    int launch_errno = 0;
    bool timed_out = false;
    bool got_line = false;
    std::string line;           // first line of stdout, without the newline
    std::string stderr_text;    // captured for diagnostics (truncated)
    int exit_code = -1;         // -1 when killed or still running at kill time
    int term_signal = 0;
};

/// Starts `argv` in its own process group, writes `input` to its stdin,
/// closes stdin and reads one newline-terminated line from stdout. Never
/// waits longer than `timeout`; the whole group is killed when it expires.
LineExchange exchange_line(const std::vector<std::string>& argv, const std::string& input,
                           std::chrono::milliseconds timeout);

} // namespace codesign
