#include "refiner/gradcheck.hpp"

#include "refiner/ops.hpp"

namespace refiner {

namespace {

std::vector<GradCheckCase> build_cases() {
  std::vector<GradCheckCase> cases;
  cases.push_back({"matmul", [](Tape<double>& t, const std::vector<Var>& v) { return matmul(t, v[0], v[1]); }, [](Rng& r) {
                     const std::size_t m = 1 + r.index(4), p = 1 + r.index(4), q = 1 + r.index(4);
                     return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{m, p}), r.normal_tensor<double>(Shape{p, q})};
                   }});
  cases.push_back({"add", [](Tape<double>& t, const std::vector<Var>& v) { return add(t, v[0], v[1]); },
                   [](Rng& r) {
                     const std::size_t m = 1 + r.index(4), n = 1 + r.index(4);
                     return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{m, n}), r.normal_tensor<double>(Shape{m, n})};
                   }});
  cases.push_back({"scale", [](Tape<double>& t, const std::vector<Var>& v) { return scale(t, v[0], -1.7); },
                   [](Rng& r) { return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{1 + r.index(4), 1 + r.index(4)})}; }});
  cases.push_back({"add_bias", [](Tape<double>& t, const std::vector<Var>& v) { return add_bias(t, v[0], v[1]); },
                   [](Rng& r) {
                     const std::size_t m = 1 + r.index(4), n = 1 + r.index(4);
                     return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{m, n}), r.normal_tensor<double>(Shape{m})};
                   }});
  cases.push_back({"transpose", [](Tape<double>& t, const std::vector<Var>& v) { return transpose(t, v[0]); },
                   [](Rng& r) { return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{1 + r.index(4), 1 + r.index(4)})}; }});
  cases.push_back({"reshape",
                   [](Tape<double>& t, const std::vector<Var>& v) {
                     return reshape(t, v[0], {t.value(v[0]).size()});
                   },
                   [](Rng& r) { return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{1 + r.index(4), 1 + r.index(4)})}; }});
  cases.push_back({"softmax_rows", [](Tape<double>& t, const std::vector<Var>& v) { return softmax_rows(t, v[0], 0.8); },
                   [](Rng& r) { return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{1 + r.index(3), 1 + r.index(6)})}; }});
  cases.push_back({"layer_norm", [](Tape<double>& t, const std::vector<Var>& v) { return layer_norm(t, v[0], v[1], v[2], 1e-6); }, [](Rng& r) {
                     const std::size_t m = 1 + r.index(3), d = 2 + r.index(5);
                     return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{m, d}), r.normal_tensor<double>(Shape{d}), r.normal_tensor<double>(Shape{d})};
                   }});
  cases.push_back({"gelu", [](Tape<double>& t, const std::vector<Var>& v) { return gelu(t, v[0]); },
                   [](Rng& r) { return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{1 + r.index(4), 1 + r.index(4)}, 2.0)}; }});
  cases.push_back({"mean", [](Tape<double>& t, const std::vector<Var>& v) { return mean(t, v[0]); },
                   [](Rng& r) { return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{1 + r.index(4), 1 + r.index(4)})}; }});
  cases.push_back({"slice_rows",
                   [](Tape<double>& t, const std::vector<Var>& v) {
                     return slice_rows(t, v[0], 1, t.value(v[0]).dim(0));
                   },
                   [](Rng& r) { return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{2 + r.index(3), 1 + r.index(4)})}; }});
  cases.push_back({"concat_rows",
                   [](Tape<double>& t, const std::vector<Var>& v) { return concat_rows(t, {v[0], v[1], v[0]}); },
                   [](Rng& r) {
                     const std::size_t n = 1 + r.index(4);
                     return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{1 + r.index(3), n}), r.normal_tensor<double>(Shape{1 + r.index(3), n})};
                   }});
  cases.push_back({"slice_cols",
                   [](Tape<double>& t, const std::vector<Var>& v) {
                     return slice_cols(t, v[0], 0, t.value(v[0]).dim(1) - 1);
                   },
                   [](Rng& r) { return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{1 + r.index(3), 2 + r.index(3)})}; }});
  cases.push_back({"concat_cols",
                   [](Tape<double>& t, const std::vector<Var>& v) { return concat_cols(t, {v[0], v[1]}); },
                   [](Rng& r) {
                     const std::size_t m = 1 + r.index(4);
                     return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{m, 1 + r.index(3)}), r.normal_tensor<double>(Shape{m, 1 + r.index(3)})};
                   }});
  cases.push_back({"conv2d_single_channel", [](Tape<double>& t, const std::vector<Var>& v) { return conv2d_single_channel(t, v[0], v[1]); }, [](Rng& r) {
                     const std::size_t k = 1 + 2 * r.index(3);
                     return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{2 + r.index(4), 2 + r.index(4)}), r.normal_tensor<double>(Shape{k, k})};
                   }});
  cases.push_back({"conv1d_rows", [](Tape<double>& t, const std::vector<Var>& v) { return conv1d_rows(t, v[0], v[1]); }, [](Rng& r) {
                     return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{2 + r.index(4), 2 + r.index(4)}),
                                             r.normal_tensor<double>(Shape{1 + 2 * r.index(3)})};
                   }});
  cases.push_back({"conv1d_cols", [](Tape<double>& t, const std::vector<Var>& v) { return conv1d_cols(t, v[0], v[1]); }, [](Rng& r) {
                     return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{2 + r.index(4), 2 + r.index(4)}),
                                             r.normal_tensor<double>(Shape{1 + 2 * r.index(3)})};
                   }});
  cases.push_back({"headwise_conv2d",
                   [](Tape<double>& t, const std::vector<Var>& v) { return headwise_conv2d(t, v[0], v[1]); },
                   [](Rng& r) {
                     const std::size_t h = 1 + r.index(3), n = 2 + r.index(4), k = 1 + 2 * r.index(2);
                     return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{h, n, n}), r.normal_tensor<double>(Shape{h, k, k})};
                   }});
  cases.push_back({"headwise_rowcol_conv",
                   [](Tape<double>& t, const std::vector<Var>& v) { return headwise_rowcol_conv(t, v[0], v[1]); },
                   [](Rng& r) {
                     const std::size_t h = 1 + r.index(3), n = 2 + r.index(4), k = 1 + 2 * r.index(2);
                     return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{h, n, n}), r.normal_tensor<double>(Shape{h, 2, k})};
                   }});
  cases.push_back({"headwise_spatial_conv",
                   [](Tape<double>& t, const std::vector<Var>& v) { return headwise_spatial_conv(t, v[0], v[1], 1); },
                   [](Rng& r) {
                     const std::size_t h = 1 + r.index(2), g = 2 + r.index(2), k = 1 + 2 * r.index(2);
                     return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{h, g * g + 1, g * g + 1}), r.normal_tensor<double>(Shape{h, k, k})};
                   }});
  cases.push_back({"cross_entropy",
                   [](Tape<double>& t, const std::vector<Var>& v) { return cross_entropy(t, v[0], 1, 0.1); },
                   [](Rng& r) { return std::vector<Tensor<double>>{r.normal_tensor<double>(Shape{2 + r.index(8)})}; }});
  return cases;
}

}  // namespace

const std::vector<GradCheckCase>& primitive_grad_cases() {
  static const std::vector<GradCheckCase> cases = build_cases();
  return cases;
}

const std::vector<std::string>& primitive_op_names() {
  static const std::vector<std::string> names{
      "matmul",      "add",         "scale",       "add_bias",    "transpose",
      "reshape",     "softmax_rows", "layer_norm", "gelu",        "mean",
      "slice_rows",  "concat_rows", "slice_cols",  "concat_cols", "conv2d_single_channel",
      "conv1d_rows", "conv1d_cols", "headwise_conv2d", "headwise_rowcol_conv", "headwise_spatial_conv",
      "cross_entropy"};
  return names;
}

}  // namespace refiner
