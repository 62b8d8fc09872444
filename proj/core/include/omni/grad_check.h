// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OMNI_GRAD_CHECK_H_
#define OMNI_GRAD_CHECK_H_

#include <cstdint>
#include <string>

#include "omni/model.h"

namespace omni {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  int checked = 0;
};

// Compares the analytic gradient of the summed loss against central
// differences for a sample of entries from every tensor: the per_tensor
// entries with the largest analytic magnitude plus per_tensor random ones.
// Relative error is |a - n| / max(|a|, |n|, floor).
struct GradCheckOptions {
  double step = 1e-4;
  int per_tensor = 3;
  double floor = 1e-8;
  uint64_t seed = 0;
};

GradCheckResult grad_check(const OmniModel<double>& model, const TrainingExample& example,
                           const GradCheckOptions& options = {});

// A toy configuration over the (24, 2, 8, 5) layout with d_model 8.
ModelConfig toy_model_config();

// Random small example for a toy model: audio features, a short text block,
// a marker and a target grid of 1..max_length steps.
TrainingExample tiny_instance(const ModelConfig& config, uint64_t seed,
                              int max_length = 4);

}  // namespace omni

#endif  // OMNI_GRAD_CHECK_H_
