#pragma once

namespace fewshot {

/// Entry point of the `fewshot` command. Returns the process exit status:
/// 0 on success, 1 on a failed command, 2 on a usage error.
int run_cli(int argc, const char* const* argv);

}  // namespace fewshot
