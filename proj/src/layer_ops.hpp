#pragma once

#include <cstdint>
#include <vector>

#include "kernels.hpp"
#include "rlvs/model.hpp"
#include "rlvs/tensor.hpp"

namespace rlvs::detail {

kernels::ConvGeometry conv_geometry(const Layer& layer, const Shape& in);

// Evaluates one layer on a batch. `argmax` is filled for maxpool layers.
template <typename T>
BasicTensor<T> run_layer(const Layer& layer,
                         const std::vector<const BasicTensor<T>*>& inputs,
                         std::vector<std::uint32_t>* argmax);

template <typename T>
void softmax_channels(const BasicTensor<T>& x, BasicTensor<T>& out);

}  // namespace rlvs::detail
