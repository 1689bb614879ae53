// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "astain/model.hpp"

namespace astain {

// Flat binary container: magic "DANNCKPT", u32 format version, then one
// record per tensor: u32 name length, name bytes, u32 rank, u64 extents,
// raw little-endian f64 values. Running batch-norm statistics are stored as
// tensors under the reserved "rs." prefix.

struct Checkpoint {
    MitosisClassifier model;
    std::optional<DomainBranch> branch;
};

void save_checkpoint(MitosisClassifier& model, DomainBranch* branch, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace astain
