// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

// nlohmann::json conversions shared by the serializers. Private to the core
// library so public headers stay free of the JSON dependency.

#ifndef OMNI_SRC_JSON_IO_H_
#define OMNI_SRC_JSON_IO_H_

#include "json.hpp"
#include "omni/model.h"
#include "omni/vocab.h"

namespace omni {

using Json = nlohmann::json;

Json layout_json(const VocabLayout& layout);
VocabLayout layout_from(const Json& j);

Json model_config_json(const ModelConfig& config);
ModelConfig model_config_from(const Json& j);

}  // namespace omni

#endif  // OMNI_SRC_JSON_IO_H_
