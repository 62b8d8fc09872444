// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OMNI_CLI_H_
#define OMNI_CLI_H_

#include <iosfwd>

namespace omni {

// Exit codes: 0 success, 1 usage error, 2 runtime failure.
int cli_main(int argc, const char* const* argv);
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace omni

#endif  // OMNI_CLI_H_
