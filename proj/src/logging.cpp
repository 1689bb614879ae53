// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <cstdlib>
#include <cstring>

#include "astain/common.hpp"

namespace astain {

LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("ASTAIN_LOG");
        if (!env) return LogLevel::Info;
        if (std::strcmp(env, "error") == 0) return LogLevel::Error;
        if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return level;
}

void log_message(LogLevel level, const char* fmt, ...) {
    if (level > log_level()) return;
    const char* tag = level == LogLevel::Error ? "error" : (level == LogLevel::Info ? "info" : "debug");
    std::fprintf(stderr, "[astain %s] ", tag);
    va_list args;
    va_start(args, fmt);
    std::vfprintf(stderr, fmt, args);
    va_end(args);
    std::fputc('\n', stderr);
}

}  // namespace astain
