// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace smartfreeze::cli {

// Entry point without the program name. Returns the process exit status:
// 0 on success, 1 for runtime failures, 2 for usage errors.
int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace smartfreeze::cli
