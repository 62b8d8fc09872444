// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/cli.h"

int main(int argc, char** argv) { return omni::cli_main(argc, argv); }
