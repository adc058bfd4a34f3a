#pragma once

// Minimal dense training engine: a residual feedforward classifier
//
//   h_0     = x W_in + b_in
//   h_{b+1} = h_b + relu(h_b W1_b + b1_b) W2_b + b2_b
//   logits  = h_N W_out + b_out
//
// with softmax cross-entropy loss. Row-vector convention throughout: a
// batch is a (batch x features) matrix and weights are (fan_in x fan_out).

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace feddrop {

using Vector = std::vector<double>;

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) {
    return values[r * cols + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return values[r * cols + c];
  }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols, cols};
  }

  bool operator==(const Matrix&) const = default;
};

struct Architecture {
  std::size_t input_dim = 0;
  std::size_t model_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_blocks = 0;
  std::size_t num_classes = 0;

  // Throws ConfigError if any dimension is zero.
  void validate() const;

  bool operator==(const Architecture&) const = default;
};

// Residual feedforward block. The hidden dimension (w1.cols == b1.size() ==
// w2.rows) is the one federated dropout removes units from.
struct FFBlock {
  Matrix w1;  // model_dim x hidden
  Vector b1;  // hidden
  Matrix w2;  // hidden x model_dim
  Vector b2;  // model_dim

  std::size_t hidden() const { return b1.size(); }
  bool operator==(const FFBlock&) const = default;
};

// Parameter tree shared by model parameters, gradients, deltas, and
// coverage masks. Blocks may have different hidden widths (shrunk models).
struct ParamTree {
  Matrix input_w;  // input_dim x model_dim
  Vector input_b;
  std::vector<FFBlock> blocks;
  Matrix output_w;  // model_dim x num_classes
  Vector output_b;

  std::size_t input_dim() const { return input_w.rows; }
  std::size_t model_dim() const { return input_w.cols; }
  std::size_t num_classes() const { return output_b.size(); }

  bool operator==(const ParamTree&) const = default;
};

using ModelParams = ParamTree;
using Gradients = ParamTree;

// Flat views over every array of a tree in declaration order:
// input_w, input_b, then per block w1, b1, w2, b2, then output_w, output_b.
std::vector<std::span<double>> arrays(ParamTree& tree);
std::vector<std::span<const double>> arrays(const ParamTree& tree);
std::vector<std::span<const double>> arrays(const ParamTree&& tree) = delete;

bool same_shape(const ParamTree& a, const ParamTree& b);
void require_same_shape(const ParamTree& a, const ParamTree& b,
                        const char* what);

// Checks that dimensions chain input -> model -> ... -> classes.
void validate_structure(const ParamTree& tree);

// Tree of the given shape with every value set to `fill`.
ParamTree filled_like(const ParamTree& shape, double fill);
ParamTree zeros(const Architecture& arch);

// Architecture of a full (unshrunk) tree. Throws ShapeError when blocks
// have unequal hidden widths.
Architecture architecture_of(const ParamTree& tree);

std::size_t param_count(const Architecture& arch);
std::size_t param_count(const ParamTree& tree);

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.
ParamTree init_params(const Architecture& arch, std::uint64_t seed);

struct Batch {
  Matrix features;                 // batch x input_dim
  std::vector<std::size_t> labels;  // batch

  std::size_t size() const { return labels.size(); }
};

struct ForwardCache {
  Matrix input;                  // x
  std::vector<Matrix> block_in;  // h_b, one per block, plus h_N at the end
  std::vector<Matrix> pre_act;   // h_b W1 + b1
  std::vector<Matrix> act;       // relu(pre_act)
};

struct ForwardResult {
  Matrix logits;  // batch x num_classes
  ForwardCache cache;
};

ForwardResult forward(const ParamTree& params, const Matrix& features);

// Logits only; skips caching intermediates.
Matrix predict(const ParamTree& params, const Matrix& features);

struct LossAndGrads {
  double loss = 0.0;  // mean softmax cross-entropy
  Gradients grads;
};

LossAndGrads loss_and_grads(const ParamTree& params, const Batch& batch);

double loss(const ParamTree& params, const Batch& batch);

struct EvalResult {
  double error = 0.0;  // fraction misclassified; argmax ties go to lower class
  double loss = 0.0;
};

EvalResult evaluate(const ParamTree& params, const Batch& batch);

// p' = p - lr * g
ParamTree sgd_step(ParamTree params, const Gradients& grads, double lr);

struct AdamHyper {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  ParamTree first_moment;
  ParamTree second_moment;
  std::uint64_t step = 0;

  static AdamState fresh(const ParamTree& like, AdamHyper hyper = {});
};

struct AdamResult {
  ParamTree params;
  AdamState state;
};

// Adam with bias correction:
//   m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
//   p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
AdamResult adam_step(AdamState state, ParamTree params, const Gradients& grads);

}  // namespace feddrop
