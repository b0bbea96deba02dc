#include "lvace/neuralnets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

namespace lvace {

namespace {

Matrix sigmoid(const Matrix& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - peak).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

void add_row_bias(Matrix& m, const Matrix& bias) { m.rowwise() += bias.row(0); }

Matrix col_sum(const Matrix& m) { return m.colwise().sum(); }

std::string hidden_name(int layer, const char* what) {
  return "hidden" + std::to_string(layer) + "." + what;
}

std::string lstm_name(int layer, int direction, const char* what) {
  return "lstm" + std::to_string(layer) + (direction == 0 ? ".fwd." : ".bwd.") + what;
}

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double limit, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-limit, limit);
  }
  return m;
}

// Frame t of a flattened batch, B x D.
Matrix frame_block(const Matrix& inputs, int t, int dim) {
  return inputs.middleCols(static_cast<Eigen::Index>(t) * dim, dim);
}

// ---------------------------------------------------------------------------
// Feedforward (FCNN / DBN)

struct FeedforwardCache {
  std::vector<Matrix> activations;  // [0] = input, [l+1] = hidden l (after dropout)
  std::vector<Matrix> pre;          // hidden pre-activations
  std::vector<Matrix> masks;        // empty when no dropout
  Matrix probabilities;
};

FeedforwardCache feedforward(const NetworkModel& model, const Matrix& inputs,
                             const DropoutState& dropout) {
  const bool use_relu = model.arch.kind == NetKind::kFcnn;
  FeedforwardCache cache;
  cache.activations.push_back(inputs);
  for (int l = 0; l < model.arch.depth; ++l) {
    Matrix z = cache.activations.back() * model.param(hidden_name(l, "weight")).transpose();
    add_row_bias(z, model.param(hidden_name(l, "bias")));
    Matrix a = use_relu ? relu(z) : sigmoid(z);
    if (dropout.rng && dropout.rate > 0.0) {
      cache.masks.push_back(apply_dropout(a, dropout.rate, *dropout.rng));
    }
    cache.pre.push_back(std::move(z));
    cache.activations.push_back(std::move(a));
  }
  Matrix logits = cache.activations.back() * model.param("output.weight").transpose();
  add_row_bias(logits, model.param("output.bias"));
  cache.probabilities = softmax_rows(logits);
  return cache;
}

void feedforward_backward(const NetworkModel& model, const FeedforwardCache& cache,
                          const Matrix& dlogits, Gradients& grads) {
  const bool use_relu = model.arch.kind == NetKind::kFcnn;
  grads[model.index_of("output.weight")] = dlogits.transpose() * cache.activations.back();
  grads[model.index_of("output.bias")] = col_sum(dlogits);
  Matrix delta = dlogits * model.param("output.weight");
  for (int l = model.arch.depth - 1; l >= 0; --l) {
    if (!cache.masks.empty()) delta.array() *= cache.masks[static_cast<std::size_t>(l)].array();
    const Matrix& z = cache.pre[static_cast<std::size_t>(l)];
    if (use_relu) {
      delta.array() *= (z.array() > 0.0).cast<double>();
    } else {
      const Matrix s = sigmoid(z);
      delta.array() *= s.array() * (1.0 - s.array());
    }
    const Matrix& input = cache.activations[static_cast<std::size_t>(l)];
    grads[model.index_of(hidden_name(l, "weight"))] = delta.transpose() * input;
    grads[model.index_of(hidden_name(l, "bias"))] = col_sum(delta);
    if (l > 0) delta = delta * model.param(hidden_name(l, "weight"));
  }
}

// ---------------------------------------------------------------------------
// BLSTM

struct DirectionCache {
  std::vector<Matrix> i, f, o, g, c, h;  // indexed by frame, each B x H
};

struct LstmRefs {
  const Matrix& w;  // 4H x in
  const Matrix& u;  // 4H x H
  const Matrix& b;  // 1 x 4H
  const Matrix* peephole;  // 3 x H or null
};

LstmRefs lstm_refs(const NetworkModel& model, int layer, int direction) {
  const Matrix* peep = model.arch.peepholes ? &model.param(lstm_name(layer, direction, "peephole"))
                                            : nullptr;
  return {model.param(lstm_name(layer, direction, "input_weight")),
          model.param(lstm_name(layer, direction, "recurrent_weight")),
          model.param(lstm_name(layer, direction, "bias")), peep};
}

// Frame processed at step s.
int frame_at(int step, int frames, bool reverse) { return reverse ? frames - 1 - step : step; }

void lstm_forward(const LstmRefs& p, const std::vector<Matrix>& xs, bool reverse,
                  DirectionCache& cache) {
  const int frames = static_cast<int>(xs.size());
  const Eigen::Index hidden = p.u.cols();
  const Eigen::Index batch = xs.front().rows();
  for (auto* v : {&cache.i, &cache.f, &cache.o, &cache.g, &cache.c, &cache.h}) v->assign(xs.size(), {});
  Matrix h_prev = Matrix::Zero(batch, hidden);
  Matrix c_prev = Matrix::Zero(batch, hidden);
  for (int s = 0; s < frames; ++s) {
    const int t = frame_at(s, frames, reverse);
    Matrix z = xs[static_cast<std::size_t>(t)] * p.w.transpose() + h_prev * p.u.transpose();
    add_row_bias(z, p.b);
    Matrix zi = z.middleCols(0, hidden);
    Matrix zf = z.middleCols(hidden, hidden);
    Matrix zo = z.middleCols(2 * hidden, hidden);
    const Matrix zg = z.middleCols(3 * hidden, hidden);
    if (p.peephole) {
      zi.array() += c_prev.array().rowwise() * p.peephole->row(0).array();
      zf.array() += c_prev.array().rowwise() * p.peephole->row(1).array();
    }
    Matrix i = sigmoid(zi);
    Matrix f = sigmoid(zf);
    Matrix g = zg.array().tanh().matrix();
    Matrix c = (f.array() * c_prev.array() + i.array() * g.array()).matrix();
    if (p.peephole) zo.array() += c.array().rowwise() * p.peephole->row(2).array();
    Matrix o = sigmoid(zo);
    Matrix h = (o.array() * c.array().tanh()).matrix();
    const auto u = static_cast<std::size_t>(t);
    h_prev = h;
    c_prev = c;
    cache.i[u] = std::move(i);
    cache.f[u] = std::move(f);
    cache.o[u] = std::move(o);
    cache.g[u] = std::move(g);
    cache.c[u] = std::move(c);
    cache.h[u] = std::move(h);
  }
}

struct LstmGradRefs {
  Matrix& w;
  Matrix& u;
  Matrix& b;
  Matrix* peephole;
};

void lstm_backward(const LstmRefs& p, const std::vector<Matrix>& xs, bool reverse,
                   const DirectionCache& cache, const std::vector<Matrix>& dh_external,
                   LstmGradRefs grads, std::vector<Matrix>& dxs) {
  const int frames = static_cast<int>(xs.size());
  const Eigen::Index hidden = p.u.cols();
  const Eigen::Index batch = xs.front().rows();
  Matrix dh_next = Matrix::Zero(batch, hidden);
  Matrix dc_next = Matrix::Zero(batch, hidden);
  const Matrix zeros = Matrix::Zero(batch, hidden);
  Matrix dz(batch, 4 * hidden);
  for (int s = frames - 1; s >= 0; --s) {
    const auto t = static_cast<std::size_t>(frame_at(s, frames, reverse));
    const Matrix& c_prev = s > 0 ? cache.c[static_cast<std::size_t>(frame_at(s - 1, frames, reverse))] : zeros;
    const Matrix& h_prev = s > 0 ? cache.h[static_cast<std::size_t>(frame_at(s - 1, frames, reverse))] : zeros;
    const auto i = cache.i[t].array();
    const auto f = cache.f[t].array();
    const auto o = cache.o[t].array();
    const auto g = cache.g[t].array();
    const Eigen::ArrayXXd tc = cache.c[t].array().tanh();

    const Eigen::ArrayXXd dh = (dh_external[t] + dh_next).array();
    const Eigen::ArrayXXd dzo = dh * tc * o * (1.0 - o);
    Eigen::ArrayXXd dc = dh * o * (1.0 - tc.square()) + dc_next.array();
    if (p.peephole) {
      dc += dzo.rowwise() * p.peephole->row(2).array();
      grads.peephole->row(2) += (dzo * cache.c[t].array()).colwise().sum().matrix();
    }
    const Eigen::ArrayXXd dzi = dc * g * i * (1.0 - i);
    const Eigen::ArrayXXd dzf = dc * c_prev.array() * f * (1.0 - f);
    const Eigen::ArrayXXd dzg = dc * i * (1.0 - g.square());
    Eigen::ArrayXXd dc_prev = dc * f;
    if (p.peephole) {
      dc_prev += dzi.rowwise() * p.peephole->row(0).array();
      dc_prev += dzf.rowwise() * p.peephole->row(1).array();
      grads.peephole->row(0) += (dzi * c_prev.array()).colwise().sum().matrix();
      grads.peephole->row(1) += (dzf * c_prev.array()).colwise().sum().matrix();
    }
    dz.middleCols(0, hidden) = dzi.matrix();
    dz.middleCols(hidden, hidden) = dzf.matrix();
    dz.middleCols(2 * hidden, hidden) = dzo.matrix();
    dz.middleCols(3 * hidden, hidden) = dzg.matrix();

    grads.w.noalias() += dz.transpose() * xs[t];
    grads.u.noalias() += dz.transpose() * h_prev;
    grads.b += col_sum(dz);
    dxs[t].noalias() += dz * p.w;
    dh_next.noalias() = dz * p.u;
    dc_next = dc_prev.matrix();
  }
}

struct BlstmCache {
  std::vector<std::vector<Matrix>> inputs;  // [layer][frame], layer input (after dropout)
  std::vector<std::array<DirectionCache, 2>> dirs;
  std::vector<std::vector<Matrix>> masks;   // [layer][frame], empty when no dropout
  std::vector<Matrix> top;                  // top layer outputs after dropout
  Matrix pooled;
  Matrix probabilities;
};

int blstm_layers(const ArchSpec& arch) { return arch.depth / 2; }

BlstmCache blstm_forward(const NetworkModel& model, const Matrix& inputs,
                         const DropoutState& dropout) {
  const ArchSpec& arch = model.arch;
  const int frames = arch.n_frames;
  const Eigen::Index hidden = arch.width;
  BlstmCache cache;
  std::vector<Matrix> xs;
  for (int t = 0; t < frames; ++t) xs.push_back(frame_block(inputs, t, arch.input_dim));
  const bool drop = dropout.rng && dropout.rate > 0.0;
  for (int l = 0; l < blstm_layers(arch); ++l) {
    cache.inputs.push_back(xs);
    cache.dirs.emplace_back();
    for (int d = 0; d < 2; ++d) lstm_forward(lstm_refs(model, l, d), xs, d == 1, cache.dirs.back()[static_cast<std::size_t>(d)]);
    std::vector<Matrix> out(static_cast<std::size_t>(frames));
    std::vector<Matrix> masks;
    for (int t = 0; t < frames; ++t) {
      const auto u = static_cast<std::size_t>(t);
      Matrix y(inputs.rows(), 2 * hidden);
      y.leftCols(hidden) = cache.dirs.back()[0].h[u];
      y.rightCols(hidden) = cache.dirs.back()[1].h[u];
      if (drop) masks.push_back(apply_dropout(y, dropout.rate, *dropout.rng));
      out[u] = std::move(y);
    }
    cache.masks.push_back(std::move(masks));
    xs = std::move(out);
  }
  cache.top = xs;
  cache.pooled = Matrix::Zero(inputs.rows(), 2 * hidden);
  for (const auto& y : cache.top) cache.pooled += y;
  cache.pooled /= frames;
  Matrix logits = cache.pooled * model.param("output.weight").transpose();
  add_row_bias(logits, model.param("output.bias"));
  cache.probabilities = softmax_rows(logits);
  return cache;
}

void blstm_backward(const NetworkModel& model, const BlstmCache& cache, const Matrix& dlogits,
                    Gradients& grads) {
  const ArchSpec& arch = model.arch;
  const int frames = arch.n_frames;
  const Eigen::Index hidden = arch.width;
  grads[model.index_of("output.weight")] = dlogits.transpose() * cache.pooled;
  grads[model.index_of("output.bias")] = col_sum(dlogits);
  const Matrix dpooled = dlogits * model.param("output.weight") / frames;
  std::vector<Matrix> dy(static_cast<std::size_t>(frames), dpooled);
  for (int l = blstm_layers(arch) - 1; l >= 0; --l) {
    const auto lu = static_cast<std::size_t>(l);
    const auto& xs = cache.inputs[lu];
    std::vector<Matrix> dxs(xs.size());
    for (std::size_t t = 0; t < xs.size(); ++t) dxs[t] = Matrix::Zero(xs[t].rows(), xs[t].cols());
    for (int d = 0; d < 2; ++d) {
      std::vector<Matrix> dh(static_cast<std::size_t>(frames));
      for (int t = 0; t < frames; ++t) {
        const auto u = static_cast<std::size_t>(t);
        Matrix g = dy[u];
        if (!cache.masks[lu].empty()) g.array() *= cache.masks[lu][u].array();
        dh[u] = d == 0 ? Matrix(g.leftCols(hidden)) : Matrix(g.rightCols(hidden));
      }
      Matrix* peep = arch.peepholes ? &grads[model.index_of(lstm_name(l, d, "peephole"))] : nullptr;
      lstm_backward(lstm_refs(model, l, d), xs, d == 1, cache.dirs[lu][static_cast<std::size_t>(d)], dh,
                    {grads[model.index_of(lstm_name(l, d, "input_weight"))],
                     grads[model.index_of(lstm_name(l, d, "recurrent_weight"))],
                     grads[model.index_of(lstm_name(l, d, "bias"))], peep},
                    dxs);
    }
    dy = std::move(dxs);
  }
}

Matrix target_delta(const Matrix& probabilities, const std::vector<int>& targets) {
  Matrix d = probabilities;
  for (std::size_t r = 0; r < targets.size(); ++r) d(static_cast<Eigen::Index>(r), targets[r]) -= 1.0;
  return d / static_cast<double>(targets.size());
}

void check_batch(const NetworkModel& model, const Batch& batch) {
  if (batch.inputs.cols() != model.arch.flat_input()) {
    throw Error(ErrorCode::kShapeMismatch, "batch input width " + std::to_string(batch.inputs.cols()) +
                                               " does not match model input " +
                                               std::to_string(model.arch.flat_input()));
  }
  if (static_cast<std::size_t>(batch.inputs.rows()) != batch.targets.size() || batch.targets.empty()) {
    throw Error(ErrorCode::kShapeMismatch, "batch needs one target per input row");
  }
  for (int t : batch.targets) {
    if (t < 0 || t >= model.arch.classes) throw Error(ErrorCode::kShapeMismatch, "target out of range");
  }
}

}  // namespace

const char* net_kind_name(NetKind kind) {
  switch (kind) {
    case NetKind::kFcnn: return "FCNN";
    case NetKind::kDbn: return "DBN";
    case NetKind::kBlstm: return "BLSTM";
  }
  return "";
}

NetKind parse_net_kind(std::string_view name) {
  if (name == "FCNN") return NetKind::kFcnn;
  if (name == "DBN") return NetKind::kDbn;
  if (name == "BLSTM") return NetKind::kBlstm;
  throw Error(ErrorCode::kInvalidArgument, "unknown network kind '" + std::string(name) + "'");
}

void validate(const ArchSpec& arch) {
  if (arch.width < 1 || arch.depth < 1 || arch.n_frames < 1 || arch.input_dim < 1 || arch.classes < 2) {
    throw Error(ErrorCode::kInvalidParameter, "architecture dimensions must be positive");
  }
  if (arch.kind == NetKind::kBlstm && arch.depth % 2 != 0) {
    throw Error(ErrorCode::kInvalidParameter,
                "BLSTM depth counts forward and backward layers and must be even");
  }
  if (arch.kind != NetKind::kBlstm && arch.peepholes) {
    throw Error(ErrorCode::kInvalidParameter, "peepholes apply to BLSTM only");
  }
}

int NetworkModel::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name == name) return static_cast<int>(i);
  }
  throw Error(ErrorCode::kShapeMismatch, "model has no tensor '" + name + "'");
}

Matrix& NetworkModel::param(const std::string& name) {
  return params[static_cast<std::size_t>(index_of(name))].value;
}

const Matrix& NetworkModel::param(const std::string& name) const {
  return params[static_cast<std::size_t>(index_of(name))].value;
}

NetworkModel init_model(const ArchSpec& arch, std::uint64_t seed) {
  validate(arch);
  NetworkModel model;
  model.arch = arch;
  model.seed = seed;
  Rng rng(seed);
  auto add = [&](std::string name, int rank, Matrix value) {
    model.params.push_back({std::move(name), rank, std::move(value)});
  };
  int top_width = arch.width;
  if (arch.kind == NetKind::kBlstm) {
    const int h = arch.width;
    int in = arch.input_dim;
    for (int l = 0; l < blstm_layers(arch); ++l) {
      for (int d = 0; d < 2; ++d) {
        add(lstm_name(l, d, "input_weight"), 2, uniform_matrix(4 * h, in, std::sqrt(6.0 / (in + h)), rng));
        add(lstm_name(l, d, "recurrent_weight"), 2, uniform_matrix(4 * h, h, std::sqrt(6.0 / (2.0 * h)), rng));
        Matrix bias = Matrix::Zero(1, 4 * h);
        bias.middleCols(h, h).setConstant(1.0);  // forget gate
        add(lstm_name(l, d, "bias"), 1, std::move(bias));
        if (arch.peepholes) add(lstm_name(l, d, "peephole"), 2, Matrix::Zero(3, h));
      }
      in = 2 * h;
    }
    top_width = 2 * h;
  } else {
    int in = arch.flat_input();
    for (int l = 0; l < arch.depth; ++l) {
      add(hidden_name(l, "weight"), 2, uniform_matrix(arch.width, in, std::sqrt(6.0 / (in + arch.width)), rng));
      add(hidden_name(l, "bias"), 1, Matrix::Zero(1, arch.width));
      in = arch.width;
    }
  }
  add("output.weight", 2,
      uniform_matrix(arch.classes, top_width, std::sqrt(6.0 / (top_width + arch.classes)), rng));
  add("output.bias", 1, Matrix::Zero(1, arch.classes));
  return model;
}

Matrix apply_dropout(Matrix& activations, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw Error(ErrorCode::kInvalidParameter, "dropout rate must be in [0, 1)");
  Matrix mask = Matrix::Ones(activations.rows(), activations.cols());
  if (rate == 0.0) return mask;
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    for (Eigen::Index c = 0; c < mask.cols(); ++c) mask(r, c) = rng.uniform() < rate ? 0.0 : keep;
  }
  activations.array() *= mask.array();
  return mask;
}

Matrix forward_probabilities(const NetworkModel& model, const Matrix& inputs) {
  if (inputs.cols() != model.arch.flat_input()) {
    throw Error(ErrorCode::kShapeMismatch, "input width does not match the model");
  }
  if (model.arch.kind == NetKind::kBlstm) return blstm_forward(model, inputs, {}).probabilities;
  return feedforward(model, inputs, {}).probabilities;
}

Matrix forward_logits(const NetworkModel& model, const Matrix& inputs) {
  const Matrix p = forward_probabilities(model, inputs);
  // Logits are recovered up to a per-row constant; callers compare differences.
  return p.array().log().matrix();
}

Vector forward_fcnn(const NetworkModel& model, const Vector& input) {
  if (model.arch.kind == NetKind::kBlstm) throw Error(ErrorCode::kShapeMismatch, "not a feedforward model");
  return forward_probabilities(model, input.transpose()).row(0).transpose();
}

Vector forward_blstm(const NetworkModel& model, const Matrix& frames) {
  if (model.arch.kind != NetKind::kBlstm) throw Error(ErrorCode::kShapeMismatch, "not a BLSTM model");
  if (frames.rows() != model.arch.n_frames || frames.cols() != model.arch.input_dim) {
    throw Error(ErrorCode::kShapeMismatch, "BLSTM input must be n_frames x input_dim");
  }
  const Matrix flat = frames.reshaped<Eigen::RowMajor>(1, frames.size());
  return forward_probabilities(model, flat).row(0).transpose();
}

Matrix blstm_cell_states(const NetworkModel& model, const Matrix& frames, int direction) {
  const Matrix flat = frames.reshaped<Eigen::RowMajor>(1, frames.size());
  const BlstmCache cache = blstm_forward(model, flat, {});
  const auto& c = cache.dirs.front()[static_cast<std::size_t>(direction)].c;
  Matrix out(static_cast<Eigen::Index>(c.size()), model.arch.width);
  for (std::size_t t = 0; t < c.size(); ++t) out.row(static_cast<Eigen::Index>(t)) = c[t].row(0);
  return out;
}

double cross_entropy(const Matrix& probabilities, const std::vector<int>& targets) {
  double acc = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    acc -= std::log(probabilities(static_cast<Eigen::Index>(r), targets[r]));
  }
  return acc / static_cast<double>(targets.size());
}

double loss(const NetworkModel& model, const Batch& batch) {
  check_batch(model, batch);
  return cross_entropy(forward_probabilities(model, batch.inputs), batch.targets);
}

LossAndGradients backward(const NetworkModel& model, const Batch& batch, const DropoutState& dropout) {
  check_batch(model, batch);
  LossAndGradients out;
  out.grads.reserve(model.params.size());
  for (const auto& p : model.params) out.grads.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  if (model.arch.kind == NetKind::kBlstm) {
    const BlstmCache cache = blstm_forward(model, batch.inputs, dropout);
    out.loss = cross_entropy(cache.probabilities, batch.targets);
    if (!std::isfinite(out.loss)) throw Error(ErrorCode::kNonFiniteLoss, "non-finite loss");
    blstm_backward(model, cache, target_delta(cache.probabilities, batch.targets), out.grads);
  } else {
    const FeedforwardCache cache = feedforward(model, batch.inputs, dropout);
    out.loss = cross_entropy(cache.probabilities, batch.targets);
    if (!std::isfinite(out.loss)) throw Error(ErrorCode::kNonFiniteLoss, "non-finite loss");
    feedforward_backward(model, cache, target_delta(cache.probabilities, batch.targets), out.grads);
  }
  return out;
}

double global_norm(const Gradients& grads) {
  double acc = 0.0;
  for (const auto& g : grads) acc += g.squaredNorm();
  return std::sqrt(acc);
}

// ---------------------------------------------------------------------------
// RBM

namespace {

Matrix hidden_probabilities(const Rbm& rbm, const Matrix& v) {
  Matrix z = v * rbm.weights.transpose();
  z.rowwise() += rbm.hidden_bias;
  return sigmoid(z);
}

Matrix visible_means(const Rbm& rbm, const Matrix& h) {
  Matrix z = h * rbm.weights;
  z.rowwise() += rbm.visible_bias;
  return rbm.visible == VisibleUnits::kGaussian ? z : sigmoid(z);
}

Matrix sample_bernoulli(const Matrix& p, Rng& rng) {
  Matrix s(p.rows(), p.cols());
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) s(r, c) = rng.uniform() < p(r, c) ? 1.0 : 0.0;
  }
  return s;
}

}  // namespace

double cd_update(Rbm& rbm, const Matrix& batch, int k, double learning_rate, Rng& rng) {
  if (k < 1) throw Error(ErrorCode::kInvalidParameter, "CD needs at least one Gibbs step");
  const Matrix ph0 = hidden_probabilities(rbm, batch);
  Matrix h = sample_bernoulli(ph0, rng);
  Matrix v, ph;
  for (int step = 1; step <= k; ++step) {
    v = visible_means(rbm, h);
    ph = hidden_probabilities(rbm, v);
    if (step < k) h = sample_bernoulli(ph, rng);
  }
  const double scale = learning_rate / static_cast<double>(batch.rows());
  rbm.weights += scale * (ph0.transpose() * batch - ph.transpose() * v);
  rbm.hidden_bias += scale * (ph0 - ph).colwise().sum();
  rbm.visible_bias += scale * (batch - v).colwise().sum();
  return (batch - v).squaredNorm() / static_cast<double>(batch.rows());
}

double reconstruction_error(const Rbm& rbm, const Matrix& data) {
  const Matrix v = visible_means(rbm, hidden_probabilities(rbm, data));
  return (data - v).squaredNorm() / static_cast<double>(data.rows());
}

PretrainReport pretrain_dbn(NetworkModel& model, const Matrix& data, const TrainConfig& cfg) {
  if (model.arch.kind != NetKind::kDbn) throw Error(ErrorCode::kInvalidParameter, "pretraining needs a DBN");
  if (data.cols() != model.arch.flat_input()) throw Error(ErrorCode::kShapeMismatch, "pretraining data width");
  PretrainReport report;
  if (cfg.pretrain_epochs <= 0 || data.rows() == 0) return report;
  Rng rng(cfg.rng_seed ^ 0x9E3779B97F4A7C15ULL);
  Matrix layer_input = data;
  const auto n = static_cast<std::size_t>(data.rows());
  std::vector<std::size_t> order(n);
  for (int l = 0; l < model.arch.depth; ++l) {
    Rbm rbm;
    rbm.weights = model.param(hidden_name(l, "weight"));
    rbm.hidden_bias = model.param(hidden_name(l, "bias")).row(0);
    rbm.visible_bias = Eigen::RowVectorXd::Zero(layer_input.cols());
    rbm.visible = l == 0 ? VisibleUnits::kGaussian : VisibleUnits::kBernoulli;
    std::vector<double> errors;
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
      for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
        Matrix batch(static_cast<Eigen::Index>(end - start), layer_input.cols());
        for (std::size_t r = start; r < end; ++r) {
          batch.row(static_cast<Eigen::Index>(r - start)) = layer_input.row(static_cast<Eigen::Index>(order[r]));
        }
        cd_update(rbm, batch, cfg.cd_steps, cfg.pretrain_lr, rng);
      }
      errors.push_back(reconstruction_error(rbm, layer_input));
    }
    report.reconstruction.push_back(std::move(errors));
    model.param(hidden_name(l, "weight")) = rbm.weights;
    model.param(hidden_name(l, "bias")).row(0) = rbm.hidden_bias;
    layer_input = hidden_probabilities(rbm, layer_input);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Training

namespace {

class Optimizer {
 public:
  Optimizer(const NetworkModel& model, const TrainConfig& cfg) : cfg_(cfg) {
    adadelta_ = model.arch.kind == NetKind::kBlstm;
    if (adadelta_) {
      for (const auto& p : model.params) {
        sq_grad_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        sq_step_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      }
    }
  }

  void step(NetworkModel& model, const Gradients& grads) {
    for (std::size_t k = 0; k < grads.size(); ++k) {
      Matrix& theta = model.params[k].value;
      if (!adadelta_) {
        theta -= cfg_.learning_rate * grads[k];
        continue;
      }
      const double rho = cfg_.adadelta_rho, eps = cfg_.adadelta_eps;
      sq_grad_[k] = rho * sq_grad_[k] + (1.0 - rho) * grads[k].cwiseAbs2();
      const Matrix delta = -((sq_step_[k].array() + eps).sqrt() / (sq_grad_[k].array() + eps).sqrt() *
                             grads[k].array()).matrix();
      sq_step_[k] = rho * sq_step_[k] + (1.0 - rho) * delta.cwiseAbs2();
      theta += delta;
    }
  }

 private:
  const TrainConfig& cfg_;
  bool adadelta_ = false;
  std::vector<Matrix> sq_grad_, sq_step_;
};

double dataset_loss(const NetworkModel& model, const Dataset& set) {
  double acc = 0.0;
  constexpr Eigen::Index kChunk = 512;
  const Eigen::Index n = set.inputs.rows();
  for (Eigen::Index start = 0; start < n; start += kChunk) {
    const Eigen::Index len = std::min(kChunk, n - start);
    const Matrix p = forward_probabilities(model, set.inputs.middleRows(start, len));
    for (Eigen::Index r = 0; r < len; ++r) {
      acc -= std::log(p(r, set.targets[static_cast<std::size_t>(start + r)]));
    }
  }
  return acc / static_cast<double>(n);
}

}  // namespace

TrainResult train(NetworkModel model, const Dataset& train_set, const Dataset& valid_set,
                  const TrainConfig& cfg) {
  if (train_set.size() == 0 || valid_set.size() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "training and validation sets must be non-empty");
  }
  if (cfg.batch_size < 1 || cfg.initial_patience <= 0) {
    throw Error(ErrorCode::kInvalidParameter, "batch size and patience must be positive");
  }
  TrainResult result;
  if (model.arch.kind == NetKind::kDbn) result.pretrain = pretrain_dbn(model, train_set.inputs, cfg);

  Rng rng(cfg.rng_seed);
  Optimizer optimizer(model, cfg);
  const bool clip = model.arch.kind == NetKind::kBlstm && cfg.clip_norm > 0.0;
  const DropoutState dropout{cfg.dropout_rate, &rng};

  result.best_valid_loss = dataset_loss(model, valid_set);
  result.model = model;
  result.history.push_back({0, 0, std::numeric_limits<double>::quiet_NaN(), result.best_valid_loss,
                            cfg.initial_patience, 0});
  long patience = cfg.initial_patience;
  long iteration = 0;
  long clipped = 0;
  const auto n = train_set.size();
  std::vector<std::size_t> order(n);
  bool done = false;
  for (int epoch = 1; epoch <= cfg.max_epochs && !done; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      Batch batch;
      batch.inputs.resize(static_cast<Eigen::Index>(end - start), train_set.inputs.cols());
      for (std::size_t r = start; r < end; ++r) {
        batch.inputs.row(static_cast<Eigen::Index>(r - start)) =
            train_set.inputs.row(static_cast<Eigen::Index>(order[r]));
        batch.targets.push_back(train_set.targets[order[r]]);
      }
      LossAndGradients lg;
      try {
        lg = backward(model, batch, dropout);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFiniteLoss) throw;
        result.non_finite = true;
        return result;
      }
      if (clip) {
        const double norm = global_norm(lg.grads);
        if (norm > cfg.clip_norm) {
          for (auto& g : lg.grads) g *= cfg.clip_norm / norm;
          ++clipped;
        }
      }
      optimizer.step(model, lg.grads);
      ++iteration;
      epoch_loss += lg.loss * static_cast<double>(end - start);
      seen += end - start;
      if (patience < iteration) {
        done = true;
        break;
      }
    }
    const double valid = dataset_loss(model, valid_set);
    if (!std::isfinite(valid)) {
      result.non_finite = true;
      return result;
    }
    if (valid < result.best_valid_loss) {
      if (valid < cfg.early_stop_factor * result.best_valid_loss) patience += iteration;
      result.best_valid_loss = valid;
      result.best_iteration = iteration;
      result.model = model;
    }
    result.history.push_back({epoch, iteration, epoch_loss / static_cast<double>(seen), valid, patience, clipped});
    if (patience < iteration) done = true;
  }
  return result;
}

void write_history(std::ostream& out, const TrainResult& result) {
  out << "# epoch iteration train_loss valid_loss patience clipped_steps\n";
  char buf[160];
  for (const auto& h : result.history) {
    std::snprintf(buf, sizeof buf, "%d %ld %.17g %.17g %ld %ld\n", h.epoch, h.iteration, h.train_loss,
                  h.valid_loss, h.patience, h.clipped_steps);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "# best_iteration %ld best_valid_loss %.17g\n", result.best_iteration,
                result.best_valid_loss);
  out << buf;
}

int predict_state(const NetworkModel& model, const Matrix& tiled) {
  if (tiled.rows() != model.arch.n_frames || tiled.cols() != model.arch.input_dim) {
    throw Error(ErrorCode::kShapeMismatch, "tiled segment is " + std::to_string(tiled.rows()) + "x" +
                                               std::to_string(tiled.cols()) + ", model expects " +
                                               std::to_string(model.arch.n_frames) + "x" +
                                               std::to_string(model.arch.input_dim));
  }
  const Matrix flat = tiled.reshaped<Eigen::RowMajor>(1, tiled.size());
  const Matrix p = forward_probabilities(model, flat);
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < p.cols(); ++c) {
    if (p(0, c) > p(0, best)) best = c;
  }
  return static_cast<int>(best);
}

ChordLabel predict(const NetworkModel& model, const Matrix& tiled) {
  if (model.arch.classes != kNumChordStates) {
    throw Error(ErrorCode::kShapeMismatch, "chord prediction needs a 217-class model");
  }
  return from_state_index(predict_state(model, tiled));
}

void save_model(const NetworkModel& model, std::ostream& out) {
  const ArchSpec& a = model.arch;
  out << "LVACE-MODEL 1 " << net_kind_name(a.kind) << ' ' << a.width << ' ' << a.depth << ' '
      << a.input_dim << ' ' << a.n_frames << ' ' << a.classes << ' ' << model.seed << '\n';
  char buf[32];
  for (const auto& t : model.params) {
    out << "TENSOR " << t.name << ' ' << t.rank;
    if (t.rank == 1) {
      out << ' ' << t.value.cols() << '\n';
    } else {
      out << ' ' << t.value.rows() << ' ' << t.value.cols() << '\n';
    }
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", t.value(r, c));
        if (c) out << ' ';
        out << buf;
      }
      out << '\n';
    }
  }
}

void save_model(const NetworkModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  save_model(model, out);
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

NetworkModel load_model(std::istream& in) {
  std::string magic, kind;
  int version = 0;
  NetworkModel model;
  ArchSpec& a = model.arch;
  if (!(in >> magic >> version >> kind >> a.width >> a.depth >> a.input_dim >> a.n_frames >> a.classes >>
        model.seed) ||
      magic != "LVACE-MODEL" || version != 1) {
    throw Error(ErrorCode::kParse, "bad model header");
  }
  a.kind = parse_net_kind(kind);
  std::string word;
  while (in >> word) {
    if (word != "TENSOR") throw Error(ErrorCode::kParse, "expected TENSOR, got '" + word + "'");
    Tensor t;
    Eigen::Index rows = 1, cols = 0;
    if (!(in >> t.name >> t.rank)) throw Error(ErrorCode::kParse, "bad tensor header");
    if (t.rank == 1) {
      in >> cols;
    } else if (t.rank == 2) {
      in >> rows >> cols;
    } else {
      throw Error(ErrorCode::kParse, "unsupported tensor rank " + std::to_string(t.rank));
    }
    if (!in || rows < 1 || cols < 1) throw Error(ErrorCode::kParse, "bad tensor dims for " + t.name);
    t.value.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (!(in >> t.value(r, c))) throw Error(ErrorCode::kParse, "truncated tensor " + t.name);
        if (!std::isfinite(t.value(r, c))) throw Error(ErrorCode::kParse, "non-finite value in " + t.name);
      }
    }
    if (t.name.find("peephole") != std::string::npos) a.peepholes = true;
    model.params.push_back(std::move(t));
  }
  // The parameter set must be exactly what the architecture implies.
  const NetworkModel reference = init_model(a, 0);
  if (reference.params.size() != model.params.size()) {
    throw Error(ErrorCode::kShapeMismatch, "tensor count does not match the architecture");
  }
  for (std::size_t i = 0; i < reference.params.size(); ++i) {
    const auto& want = reference.params[i];
    const auto& got = model.params[i];
    if (want.name != got.name || want.value.rows() != got.value.rows() || want.value.cols() != got.value.cols()) {
      throw Error(ErrorCode::kShapeMismatch, "tensor '" + got.name + "' does not match the architecture");
    }
  }
  return model;
}

NetworkModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return load_model(in);
}

}  // namespace lvace
