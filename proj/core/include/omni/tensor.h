// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OMNI_TENSOR_H_
#define OMNI_TENSOR_H_

#include <Eigen/Core>

namespace omni {

// Row-major so that one sequence step is one contiguous row.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using MatF = Mat<float>;
using MatD = Mat<double>;

}  // namespace omni

#endif  // OMNI_TENSOR_H_
