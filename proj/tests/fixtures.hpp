#pragma once

// Small model and data fixtures shared by the unit tests and the acceptance run.

#include "lvace/neuralnets.hpp"
#include "oracles.hpp"

namespace fixture {

using namespace lvace;

// Model with every parameter (biases, peepholes too) drawn from [-a, a].
inline NetworkModel random_model(const ArchSpec& arch, std::uint64_t seed, double a = 0.5) {
  NetworkModel m = init_model(arch, seed);
  Rng rng(seed + 101);
  for (auto& p : m.params) {
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) p.value(r, c) = rng.uniform(-a, a);
  }
  return m;
}

inline Batch random_batch(const ArchSpec& arch, int rows, std::uint64_t seed) {
  Rng rng(seed);
  Batch b;
  b.inputs.resize(rows, arch.flat_input());
  for (Eigen::Index r = 0; r < b.inputs.rows(); ++r)
    for (Eigen::Index c = 0; c < b.inputs.cols(); ++c) b.inputs(r, c) = rng.uniform(-1.0, 1.0);
  for (int r = 0; r < rows; ++r) b.targets.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(arch.classes))));
  return b;
}

// Analytic gradients of every parameter against central differences.
inline oracle::GradCheck gradient_check(const ArchSpec& arch, std::uint64_t seed) {
  NetworkModel m = random_model(arch, seed);
  const Batch b = random_batch(arch, 4, seed + 7);
  const Gradients g = backward(m, b).grads;
  std::vector<Matrix*> ptrs;
  for (auto& p : m.params) ptrs.push_back(&p.value);
  return oracle::check_gradients(ptrs, g, [&] { return loss(m, b); });
}

// The toy sizes used for gradient checks: D = 6, N = 3, width 5, 4 classes.
inline ArchSpec toy_arch(NetKind kind, bool peepholes = false, int depth = 2) {
  ArchSpec a;
  a.kind = kind;
  a.width = 5;
  a.depth = depth;
  a.input_dim = 6;
  a.n_frames = 3;
  a.classes = 4;
  a.peepholes = peepholes;
  return a;
}

}  // namespace fixture
