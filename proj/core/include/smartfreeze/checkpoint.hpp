// SPDX-License-Identifier: Apache-2.0
//
// Model checkpoints as two files: `<base>.bin`, a flat little-endian dump of
// 64-bit reals, and `<base>.manifest`, a text description of the
// architecture plus one line per tensor (name, shape, byte offset).
#pragma once

#include <filesystem>

#include "smartfreeze/nn.hpp"

namespace smartfreeze {

void save_checkpoint(const std::filesystem::path& base, const Network& net);
Network load_checkpoint(const std::filesystem::path& base);

}  // namespace smartfreeze
