#include "feddrop/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "feddrop/errors.hpp"
#include "feddrop/random.hpp"

namespace feddrop {

namespace {

// C = A B
Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* out = c.values.data() + i * c.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.values.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) out[j] += aik * brow[j];
    }
  }
  return c;
}

// C = A^T B
Matrix matmul_at(const Matrix& a, const Matrix& b) {
  Matrix c(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = a.values.data() + k * a.cols;
    const double* brow = b.values.data() + k * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* out = c.values.data() + i * c.cols;
      for (std::size_t j = 0; j < b.cols; ++j) out[j] += aki * brow[j];
    }
  }
  return c;
}

// C = A B^T
Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.values.data() + i * a.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = b.values.data() + j * b.cols;
      double sum = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) sum += arow[k] * brow[k];
      c(i, j) = sum;
    }
  }
  return c;
}

void add_bias(Matrix& m, const Vector& bias) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto row = m.row(i);
    for (std::size_t j = 0; j < m.cols; ++j) row[j] += bias[j];
  }
}

Vector column_sums(const Matrix& m) {
  Vector out(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto row = m.row(i);
    for (std::size_t j = 0; j < m.cols; ++j) out[j] += row[j];
  }
  return out;
}

void fill_uniform(Matrix& m, Rng& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(m.rows));
  for (auto& value : m.values) value = uniform_real(rng, -scale, scale);
}

void require_input(const ParamTree& params, const Matrix& features) {
  if (features.cols != params.input_dim()) {
    throw ShapeError("feature width " + std::to_string(features.cols) +
                     " does not match input dimension " +
                     std::to_string(params.input_dim()));
  }
}

// Row-wise log-sum-exp.
double log_sum_exp(std::span<const double> row) {
  const double peak = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double value : row) sum += std::exp(value - peak);
  return peak + std::log(sum);
}

void check_labels(const Batch& batch, std::size_t num_classes) {
  if (batch.features.rows != batch.labels.size()) {
    throw DataError("batch has " + std::to_string(batch.features.rows) +
                    " rows but " + std::to_string(batch.labels.size()) +
                    " labels");
  }
  if (batch.labels.empty()) throw DataError("empty batch");
  for (auto label : batch.labels) {
    if (label >= num_classes) {
      throw DataError("label " + std::to_string(label) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
}

}  // namespace

void Architecture::validate() const {
  if (input_dim == 0 || model_dim == 0 || hidden_dim == 0 || num_blocks == 0 ||
      num_classes == 0) {
    throw ConfigError("architecture dimensions must all be >= 1");
  }
}

std::vector<std::span<double>> arrays(ParamTree& tree) {
  std::vector<std::span<double>> out;
  out.reserve(4 + 4 * tree.blocks.size());
  out.emplace_back(tree.input_w.values);
  out.emplace_back(tree.input_b);
  for (auto& block : tree.blocks) {
    out.emplace_back(block.w1.values);
    out.emplace_back(block.b1);
    out.emplace_back(block.w2.values);
    out.emplace_back(block.b2);
  }
  out.emplace_back(tree.output_w.values);
  out.emplace_back(tree.output_b);
  return out;
}

std::vector<std::span<const double>> arrays(const ParamTree& tree) {
  std::vector<std::span<const double>> out;
  out.reserve(4 + 4 * tree.blocks.size());
  out.emplace_back(tree.input_w.values);
  out.emplace_back(tree.input_b);
  for (const auto& block : tree.blocks) {
    out.emplace_back(block.w1.values);
    out.emplace_back(block.b1);
    out.emplace_back(block.w2.values);
    out.emplace_back(block.b2);
  }
  out.emplace_back(tree.output_w.values);
  out.emplace_back(tree.output_b);
  return out;
}

bool same_shape(const ParamTree& a, const ParamTree& b) {
  auto dims = [](const Matrix& m) { return std::pair{m.rows, m.cols}; };
  if (dims(a.input_w) != dims(b.input_w) || a.input_b.size() != b.input_b.size() ||
      dims(a.output_w) != dims(b.output_w) ||
      a.output_b.size() != b.output_b.size() ||
      a.blocks.size() != b.blocks.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    const auto& x = a.blocks[i];
    const auto& y = b.blocks[i];
    if (dims(x.w1) != dims(y.w1) || x.b1.size() != y.b1.size() ||
        dims(x.w2) != dims(y.w2) || x.b2.size() != y.b2.size()) {
      return false;
    }
  }
  return true;
}

void require_same_shape(const ParamTree& a, const ParamTree& b,
                        const char* what) {
  if (!same_shape(a, b)) {
    throw ShapeError(std::string(what) + ": parameter trees differ in shape");
  }
}

void validate_structure(const ParamTree& tree) {
  const std::size_t model = tree.input_w.cols;
  const auto fail = [](const std::string& msg) { throw ShapeError(msg); };
  if (tree.input_w.rows == 0 || model == 0) fail("empty input projection");
  if (tree.input_w.values.size() != tree.input_w.rows * model)
    fail("input projection storage size");
  if (tree.input_b.size() != model) fail("input bias width");
  if (tree.blocks.empty()) fail("model needs at least one block");
  for (std::size_t i = 0; i < tree.blocks.size(); ++i) {
    const auto& block = tree.blocks[i];
    const std::size_t hidden = block.b1.size();
    const std::string at = "block " + std::to_string(i) + ": ";
    if (hidden == 0) fail(at + "hidden width is zero");
    if (block.w1.rows != model || block.w1.cols != hidden ||
        block.w1.values.size() != model * hidden)
      fail(at + "w1 shape");
    if (block.w2.rows != hidden || block.w2.cols != model ||
        block.w2.values.size() != model * hidden)
      fail(at + "w2 shape");
    if (block.b2.size() != model) fail(at + "b2 width");
  }
  if (tree.output_w.rows != model || tree.output_w.cols == 0 ||
      tree.output_w.values.size() != model * tree.output_w.cols)
    fail("output projection shape");
  if (tree.output_b.size() != tree.output_w.cols) fail("output bias width");
}

ParamTree filled_like(const ParamTree& shape, double fill) {
  ParamTree out = shape;
  for (auto span : arrays(out)) std::fill(span.begin(), span.end(), fill);
  return out;
}

ParamTree zeros(const Architecture& arch) {
  arch.validate();
  ParamTree tree;
  tree.input_w = Matrix(arch.input_dim, arch.model_dim);
  tree.input_b.assign(arch.model_dim, 0.0);
  tree.blocks.resize(arch.num_blocks);
  for (auto& block : tree.blocks) {
    block.w1 = Matrix(arch.model_dim, arch.hidden_dim);
    block.b1.assign(arch.hidden_dim, 0.0);
    block.w2 = Matrix(arch.hidden_dim, arch.model_dim);
    block.b2.assign(arch.model_dim, 0.0);
  }
  tree.output_w = Matrix(arch.model_dim, arch.num_classes);
  tree.output_b.assign(arch.num_classes, 0.0);
  return tree;
}

Architecture architecture_of(const ParamTree& tree) {
  validate_structure(tree);
  Architecture arch{tree.input_dim(), tree.model_dim(),
                    tree.blocks.front().hidden(), tree.blocks.size(),
                    tree.num_classes()};
  for (const auto& block : tree.blocks) {
    if (block.hidden() != arch.hidden_dim) {
      throw ShapeError("blocks have unequal hidden widths");
    }
  }
  return arch;
}

std::size_t param_count(const Architecture& arch) {
  const std::size_t m = arch.model_dim;
  const std::size_t h = arch.hidden_dim;
  return (arch.input_dim * m + m) + arch.num_blocks * (m * h + h + h * m + m) +
         (m * arch.num_classes + arch.num_classes);
}

std::size_t param_count(const ParamTree& tree) {
  std::size_t total = 0;
  for (auto span : arrays(tree)) total += span.size();
  return total;
}

ParamTree init_params(const Architecture& arch, std::uint64_t seed) {
  ParamTree tree = zeros(arch);
  Rng rng = make_stream(seed, StreamTag::kInit);
  fill_uniform(tree.input_w, rng);
  for (auto& block : tree.blocks) {
    fill_uniform(block.w1, rng);
    fill_uniform(block.w2, rng);
  }
  fill_uniform(tree.output_w, rng);
  return tree;
}

ForwardResult forward(const ParamTree& params, const Matrix& features) {
  require_input(params, features);
  ForwardResult result;
  auto& cache = result.cache;
  cache.input = features;
  Matrix h = matmul(features, params.input_w);
  add_bias(h, params.input_b);
  for (const auto& block : params.blocks) {
    Matrix pre = matmul(h, block.w1);
    add_bias(pre, block.b1);
    Matrix act = pre;
    for (auto& value : act.values) value = std::max(value, 0.0);
    Matrix out = matmul(act, block.w2);
    for (std::size_t i = 0; i < out.rows; ++i) {
      auto orow = out.row(i);
      auto hrow = h.row(i);
      for (std::size_t j = 0; j < out.cols; ++j) orow[j] = hrow[j] + (orow[j] + block.b2[j]);
    }
    cache.block_in.push_back(std::move(h));
    cache.pre_act.push_back(std::move(pre));
    cache.act.push_back(std::move(act));
    h = std::move(out);
  }
  result.logits = matmul(h, params.output_w);
  add_bias(result.logits, params.output_b);
  cache.block_in.push_back(std::move(h));
  return result;
}

Matrix predict(const ParamTree& params, const Matrix& features) {
  require_input(params, features);
  Matrix h = matmul(features, params.input_w);
  add_bias(h, params.input_b);
  for (const auto& block : params.blocks) {
    Matrix act = matmul(h, block.w1);
    add_bias(act, block.b1);
    for (auto& value : act.values) value = std::max(value, 0.0);
    Matrix out = matmul(act, block.w2);
    for (std::size_t i = 0; i < out.rows; ++i) {
      auto orow = out.row(i);
      auto hrow = h.row(i);
      for (std::size_t j = 0; j < out.cols; ++j) orow[j] = hrow[j] + (orow[j] + block.b2[j]);
    }
    h = std::move(out);
  }
  Matrix logits = matmul(h, params.output_w);
  add_bias(logits, params.output_b);
  return logits;
}

double loss(const ParamTree& params, const Batch& batch) {
  check_labels(batch, params.num_classes());
  const Matrix logits = predict(params, batch.features);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    total += log_sum_exp(logits.row(i)) - logits(i, batch.labels[i]);
  }
  return total / static_cast<double>(batch.size());
}

LossAndGrads loss_and_grads(const ParamTree& params, const Batch& batch) {
  check_labels(batch, params.num_classes());
  ForwardResult fwd = forward(params, batch.features);
  const auto& cache = fwd.cache;
  const double n = static_cast<double>(batch.size());

  // dL/dlogits = (softmax - onehot) / n
  LossAndGrads out;
  Matrix dlogits = std::move(fwd.logits);
  double total = 0.0;
  for (std::size_t i = 0; i < dlogits.rows; ++i) {
    auto row = dlogits.row(i);
    const double lse = log_sum_exp(row);
    total += lse - row[batch.labels[i]];
    for (auto& value : row) value = std::exp(value - lse) / n;
    row[batch.labels[i]] -= 1.0 / n;
  }
  out.loss = total / n;

  auto& g = out.grads;
  g.blocks.resize(params.blocks.size());
  g.output_w = matmul_at(cache.block_in.back(), dlogits);
  g.output_b = column_sums(dlogits);
  Matrix dh = matmul_bt(dlogits, params.output_w);

  for (std::size_t b = params.blocks.size(); b-- > 0;) {
    const auto& block = params.blocks[b];
    auto& gb = g.blocks[b];
    gb.w2 = matmul_at(cache.act[b], dh);
    gb.b2 = column_sums(dh);
    Matrix dpre = matmul_bt(dh, block.w2);
    const auto& pre = cache.pre_act[b];
    for (std::size_t k = 0; k < dpre.values.size(); ++k) {
      if (!(pre.values[k] > 0.0)) dpre.values[k] = 0.0;
    }
    gb.w1 = matmul_at(cache.block_in[b], dpre);
    gb.b1 = column_sums(dpre);
    const Matrix through = matmul_bt(dpre, block.w1);
    for (std::size_t k = 0; k < dh.values.size(); ++k) dh.values[k] += through.values[k];
  }

  g.input_w = matmul_at(cache.input, dh);
  g.input_b = column_sums(dh);
  return out;
}

EvalResult evaluate(const ParamTree& params, const Batch& batch) {
  check_labels(batch, params.num_classes());
  const Matrix logits = predict(params, batch.features);
  std::size_t wrong = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    auto row = logits.row(i);
    const auto best = static_cast<std::size_t>(
        std::max_element(row.begin(), row.end()) - row.begin());
    if (best != batch.labels[i]) ++wrong;
    total += log_sum_exp(row) - row[batch.labels[i]];
  }
  const double n = static_cast<double>(batch.size());
  return {static_cast<double>(wrong) / n, total / n};
}

ParamTree sgd_step(ParamTree params, const Gradients& grads, double lr) {
  require_same_shape(params, grads, "sgd_step");
  auto dst = arrays(params);
  auto src = arrays(grads);
  for (std::size_t a = 0; a < dst.size(); ++a) {
    for (std::size_t i = 0; i < dst[a].size(); ++i) dst[a][i] -= lr * src[a][i];
  }
  return params;
}

AdamState AdamState::fresh(const ParamTree& like, AdamHyper hyper) {
  AdamState state;
  state.hyper = hyper;
  state.first_moment = filled_like(like, 0.0);
  state.second_moment = filled_like(like, 0.0);
  return state;
}

AdamResult adam_step(AdamState state, ParamTree params, const Gradients& grads) {
  require_same_shape(params, grads, "adam_step");
  require_same_shape(params, state.first_moment, "adam_step first moment");
  require_same_shape(params, state.second_moment, "adam_step second moment");
  const auto& hp = state.hyper;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(hp.beta1, t);
  const double correction2 = 1.0 - std::pow(hp.beta2, t);

  auto p = arrays(params);
  auto g = arrays(grads);
  auto m = arrays(state.first_moment);
  auto v = arrays(state.second_moment);
  for (std::size_t a = 0; a < p.size(); ++a) {
    for (std::size_t i = 0; i < p[a].size(); ++i) {
      const double gi = g[a][i];
      m[a][i] = hp.beta1 * m[a][i] + (1.0 - hp.beta1) * gi;
      v[a][i] = hp.beta2 * v[a][i] + (1.0 - hp.beta2) * gi * gi;
      const double m_hat = m[a][i] / correction1;
      const double v_hat = v[a][i] / correction2;
      p[a][i] -= hp.lr * m_hat / (std::sqrt(v_hat) + hp.epsilon);
    }
  }
  return {std::move(params), std::move(state)};
}

}  // namespace feddrop
