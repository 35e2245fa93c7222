#pragma once

#include <functional>

#include "test_util.hpp"
#include "ufc/numerics/ops.hpp"

namespace ufc::testing {

/// Random weights dotted with an op output: a generic scalar probe.
inline Array<double> probe(const Array<double>& y, std::uint64_t seed) {
  return sum(mul(y, random_array(y.shape(), seed)));
}

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  std::function<Array<double>(const std::vector<Array<double>>&)> f;
};

/// One scalar probe per differentiable op.
inline std::vector<OpCase> differentiable_op_cases() {
  using A = Array<double>;
  return {
      {"matmul", {{4, 3}, {3, 5}}, [](auto& v) { return probe(matmul(v[0], v[1]), 1); }},
      {"transpose", {{3, 4}}, [](auto& v) { return probe(transpose(v[0]), 2); }},
      {"concat_cols", {{3, 2}, {3, 4}}, [](auto& v) { return probe(concat_cols(v[0], v[1]), 3); }},
      {"slice_cols", {{3, 6}}, [](auto& v) { return probe(slice_cols(v[0], 1, 4), 4); }},
      {"add", {{3, 3}, {3, 3}}, [](auto& v) { return probe(add(v[0], v[1]), 5); }},
      {"sub", {{3, 3}, {3, 3}}, [](auto& v) { return probe(sub(v[0], v[1]), 6); }},
      {"mul", {{3, 3}, {3, 3}}, [](auto& v) { return probe(mul(v[0], v[1]), 7); }},
      {"add_row", {{3, 4}, {4}}, [](auto& v) { return probe(add_row(v[0], v[1]), 8); }},
      {"div_col", {{3, 4}, {3, 1}},
       [](auto& v) { return probe(div_col(v[0], add(v[1], A::full({3, 1}, 3.0))), 9); }},
      {"sum_rows", {{4, 3}}, [](auto& v) { return probe(sum_rows(v[0]), 10); }},
      {"silu", {{3, 4}}, [](auto& v) { return probe(silu(v[0]), 11); }},
      {"elu_plus_one", {{3, 4}}, [](auto& v) { return probe(elu_plus_one(v[0]), 12); }},
      {"softmax", {{3, 4, 2}}, [](auto& v) { return probe(softmax(v[0], 1, 0.7), 13); }},
      {"layer_norm", {{3, 5}, {5}, {5}}, [](auto& v) { return probe(layer_norm(v[0], v[1], v[2]), 14); }},
      {"l2_normalize", {{3, 4}}, [](auto& v) { return probe(l2_normalize(v[0]), 15); }},
      {"conv2d", {{5, 6, 2}, {3, 3, 2, 3}}, [](auto& v) { return probe(conv2d(v[0], v[1], 1), 16); }},
      {"conv2d_s2", {{6, 5, 2}, {3, 3, 2, 3}}, [](auto& v) { return probe(conv2d(v[0], v[1], 2), 17); }},
      {"bilinear_resize_up", {{3, 2, 2}}, [](auto& v) { return probe(bilinear_resize(v[0], 5, 7), 18); }},
      {"bilinear_resize_down", {{8, 6, 2}}, [](auto& v) { return probe(bilinear_resize(v[0], 3, 4), 19); }},
      {"bilinear_sample", {{4, 5, 2}},
       [](auto& v) { return probe(bilinear_sample(v[0], A({3, 2}, {0.3, 1.7, 3.9, 0.2, -1, 2.5})).values, 20); }},
      {"plane_conv_lead", {{3, 4, 2, 3}, {3, 3}}, [](auto& v) { return probe(plane_conv(v[0], v[1], true), 21); }},
      {"plane_conv_trail", {{2, 3, 4, 3}, {3, 3}}, [](auto& v) { return probe(plane_conv(v[0], v[1], false), 22); }},
      {"reshape", {{2, 6}}, [](auto& v) { return probe(reshape(v[0], {3, 4}), 23); }},
      {"mean", {{2, 6}}, [](auto& v) { return mean(mul(v[0], v[0])); }},
  };
}

}  // namespace ufc::testing
