// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace astain {

// Full command-line surface (train / normalize / evaluate / infer / mine /
// synth / export-features). args[0] is the program name. Returns the process
// exit status.
int run_cli(std::vector<std::string> args);

}  // namespace astain
