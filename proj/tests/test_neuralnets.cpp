#include "doctest.h"

#include "fixtures.hpp"
#include "lvace/neuralnets.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <cmath>
#include <sstream>

using namespace lvace;

namespace {

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<int> argmax_rows(const Matrix& p) {
  std::vector<int> out;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < p.cols(); ++c)
      if (p(r, c) > p(r, best)) best = c;
    out.push_back(static_cast<int>(best));
  }
  return out;
}

}  // namespace

TEST_CASE("parameter layout") {
  ArchSpec a = fixture::toy_arch(NetKind::kBlstm, true, 4);
  const NetworkModel m = init_model(a, 1);
  CHECK(m.param("lstm0.fwd.input_weight").rows() == 20);
  CHECK(m.param("lstm0.fwd.input_weight").cols() == 6);
  CHECK(m.param("lstm1.bwd.input_weight").cols() == 10);
  CHECK(m.param("lstm0.bwd.recurrent_weight").cols() == 5);
  CHECK(m.param("lstm1.fwd.peephole").rows() == 3);
  CHECK(m.param("output.weight").cols() == 10);
  // forget gate bias starts at one, other gates at zero
  const Matrix& b = m.param("lstm0.fwd.bias");
  CHECK(b.middleCols(5, 5).isConstant(1.0));
  CHECK(b.leftCols(5).isZero());
  CHECK(b.rightCols(10).isZero());
  // recurrent init bound sqrt(6 / 2H)
  CHECK(m.param("lstm0.fwd.recurrent_weight").cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 10.0));

  const NetworkModel f = init_model(fixture::toy_arch(NetKind::kFcnn), 1);
  CHECK(f.param("hidden0.weight").rows() == 5);
  CHECK(f.param("hidden0.weight").cols() == 18);
  CHECK(f.param("hidden1.weight").cols() == 5);
  CHECK(f.param("hidden0.weight").cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 23.0));

  a.depth = 3;
  CHECK_THROWS_AS(validate(a), Error);
  ArchSpec bad = fixture::toy_arch(NetKind::kFcnn, true);
  CHECK_THROWS_AS(validate(bad), Error);
}

TEST_CASE("softmax outputs") {
  ArchSpec a = fixture::toy_arch(NetKind::kFcnn);
  a.classes = 217;
  NetworkModel zero = init_model(a, 0);
  for (auto& p : zero.params) p.value.setZero();
  const Vector out = forward_fcnn(zero, Vector::Random(18));
  for (Eigen::Index c = 0; c < out.size(); ++c) CHECK(out(c) == doctest::Approx(1.0 / 217).epsilon(1e-12));
  // uniform output: lowest index wins
  CHECK(predict_state(zero, Matrix::Random(3, 6)) == 0);
  CHECK(predict(zero, Matrix::Random(3, 6)) == from_state_index(0));
  CHECK_THROWS_AS(predict(zero, Matrix::Random(2, 6)), Error);

  for (NetKind kind : {NetKind::kFcnn, NetKind::kDbn, NetKind::kBlstm}) {
    const ArchSpec t = fixture::toy_arch(kind);
    const NetworkModel m = fixture::random_model(t, 3, 2.0);
    const Matrix p = forward_probabilities(m, fixture::random_batch(t, 20, 4).inputs);
    CHECK((p.array() >= 0.0).all());
    for (Eigen::Index r = 0; r < p.rows(); ++r) CHECK(std::abs(p.row(r).sum() - 1.0) < 1e-9);
  }
}

TEST_CASE("hand 2-2-2 network") {
  ArchSpec a;
  a.kind = NetKind::kFcnn;
  a.width = 2;
  a.depth = 1;
  a.input_dim = 2;
  a.n_frames = 1;
  a.classes = 2;
  NetworkModel m = init_model(a, 0);
  m.param("hidden0.weight") << 1.0, -2.0, 0.5, 0.25;
  m.param("hidden0.bias") << 0.1, -0.3;
  m.param("output.weight") << 1.0, 2.0, -1.0, 0.5;
  m.param("output.bias") << 0.0, 0.2;
  Vector x(2);
  x << 1.0, 0.4;
  // h = relu([1 - 0.8 + 0.1, 0.5 + 0.1 - 0.3]) = [0.3, 0.3]
  // z = [0.3 + 0.6, -0.3 + 0.15 + 0.2] = [0.9, 0.05]
  const double e0 = std::exp(0.9), e1 = std::exp(0.05);
  const Vector p = forward_fcnn(m, x);
  CHECK(p(0) == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-12));
  CHECK(p(1) == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-12));
  // negative pre-activation is cut by the ReLU
  x << -1.0, 0.0;
  // h = relu([-0.9, -0.8]) = 0, z = [0, 0.2]
  const Vector q = forward_fcnn(m, x);
  CHECK(q(1) == doctest::Approx(std::exp(0.2) / (1.0 + std::exp(0.2))).epsilon(1e-12));
}

TEST_CASE("DBN hidden units are sigmoids") {
  ArchSpec a;
  a.kind = NetKind::kDbn;
  a.width = 1;
  a.depth = 1;
  a.input_dim = 1;
  a.n_frames = 1;
  a.classes = 2;
  NetworkModel m = init_model(a, 0);
  m.param("hidden0.weight") << 2.0;
  m.param("hidden0.bias") << -1.0;
  m.param("output.weight") << 1.0, -1.0;
  m.param("output.bias") << 0.0, 0.0;
  Vector x(1);
  x << -0.25;
  const double h = sig(2.0 * -0.25 - 1.0);
  const Vector p = forward_fcnn(m, x);
  CHECK(p(0) == doctest::Approx(std::exp(h) / (std::exp(h) + std::exp(-h))).epsilon(1e-12));
}

TEST_CASE("LSTM cell follows the manual recurrence") {
  ArchSpec a;
  a.kind = NetKind::kBlstm;
  a.width = 1;
  a.depth = 2;
  a.input_dim = 1;
  a.n_frames = 2;
  a.classes = 2;
  NetworkModel m = init_model(a, 0);
  // gate order i, f, o, g
  m.param("lstm0.fwd.input_weight") << 0.5, -0.3, 0.8, 1.2;
  m.param("lstm0.fwd.recurrent_weight") << 0.2, 0.4, -0.6, 0.7;
  m.param("lstm0.fwd.bias") << 0.1, 1.0, 0.0, -0.2;
  Matrix x(2, 1);
  x << 0.9, -0.4;
  const double i1 = sig(0.5 * 0.9 + 0.1), f1 = sig(-0.3 * 0.9 + 1.0);
  const double o1 = sig(0.8 * 0.9), g1 = std::tanh(1.2 * 0.9 - 0.2);
  (void)f1;
  const double c1 = i1 * g1;
  const double h1 = o1 * std::tanh(c1);
  const double i2 = sig(0.5 * -0.4 + 0.2 * h1 + 0.1);
  const double f2 = sig(-0.3 * -0.4 + 0.4 * h1 + 1.0);
  const double g2 = std::tanh(1.2 * -0.4 + 0.7 * h1 - 0.2);
  const double c2 = f2 * c1 + i2 * g2;
  const Matrix c = blstm_cell_states(m, x, 0);
  CHECK(c(0, 0) == doctest::Approx(c1).epsilon(1e-12));
  CHECK(c(1, 0) == doctest::Approx(c2).epsilon(1e-12));

  // backward direction sees frame 1 first
  m.param("lstm0.bwd.input_weight") = m.param("lstm0.fwd.input_weight");
  m.param("lstm0.bwd.recurrent_weight") = m.param("lstm0.fwd.recurrent_weight");
  m.param("lstm0.bwd.bias") = m.param("lstm0.fwd.bias");
  Matrix xr(2, 1);
  xr << -0.4, 0.9;
  const Matrix cb = blstm_cell_states(m, xr, 1);
  CHECK(cb(1, 0) == doctest::Approx(c1).epsilon(1e-12));
  CHECK(cb(0, 0) == doctest::Approx(c2).epsilon(1e-12));
}

TEST_CASE("peepholes feed the cell into the gates") {
  ArchSpec a;
  a.kind = NetKind::kBlstm;
  a.width = 1;
  a.depth = 2;
  a.input_dim = 1;
  a.n_frames = 2;
  a.classes = 2;
  a.peepholes = true;
  NetworkModel m = init_model(a, 0);
  m.param("lstm0.fwd.input_weight") << 0.5, -0.3, 0.8, 1.2;
  m.param("lstm0.fwd.recurrent_weight") << 0.0, 0.0, 0.0, 0.0;
  m.param("lstm0.fwd.bias") << 0.0, 0.0, 0.0, 0.0;
  m.param("lstm0.fwd.peephole") << 0.3, -0.5, 0.0;
  Matrix x(2, 1);
  x << 1.0, 1.0;
  const double c1 = sig(0.5) * std::tanh(1.2);
  const double c2 = sig(-0.3 - 0.5 * c1) * c1 + sig(0.5 + 0.3 * c1) * std::tanh(1.2);
  const Matrix c = blstm_cell_states(m, x, 0);
  CHECK(c(0, 0) == doctest::Approx(c1).epsilon(1e-12));
  CHECK(c(1, 0) == doctest::Approx(c2).epsilon(1e-12));
}

TEST_CASE("single-frame BLSTM pools trivially") {
  ArchSpec a = fixture::toy_arch(NetKind::kBlstm);
  a.n_frames = 1;
  const NetworkModel m = fixture::random_model(a, 8);
  Matrix x = Matrix::Random(1, 6);
  const Matrix cf = blstm_cell_states(m, x, 0);
  const Matrix cb = blstm_cell_states(m, x, 1);
  CHECK(cf.rows() == 1);
  CHECK(cb.rows() == 1);
  CHECK(forward_blstm(m, x).sum() == doctest::Approx(1.0));
}

TEST_CASE("time reversal with swapped directions gives the same output") {
  const ArchSpec a = fixture::toy_arch(NetKind::kBlstm, true);
  const NetworkModel m = fixture::random_model(a, 5);
  NetworkModel s = m;
  for (const char* w : {"input_weight", "recurrent_weight", "bias", "peephole"}) {
    s.param(std::string("lstm0.fwd.") + w) = m.param(std::string("lstm0.bwd.") + w);
    s.param(std::string("lstm0.bwd.") + w) = m.param(std::string("lstm0.fwd.") + w);
  }
  const Matrix ow = m.param("output.weight");
  s.param("output.weight").leftCols(5) = ow.rightCols(5);
  s.param("output.weight").rightCols(5) = ow.leftCols(5);
  const Matrix x = Matrix::Random(3, 6);
  const Matrix xr = x.colwise().reverse();
  const Vector p = forward_blstm(m, x), q = forward_blstm(s, xr);
  CHECK((p - q).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("hidden unit permutation leaves the BLSTM loss unchanged") {
  const ArchSpec a = fixture::toy_arch(NetKind::kBlstm, true);
  const NetworkModel m = fixture::random_model(a, 6);
  const std::vector<int> perm{3, 0, 4, 1, 2};
  const int h = 5;
  NetworkModel p = m;
  for (const char* dir : {"lstm0.fwd.", "lstm0.bwd."}) {
    const std::string d(dir);
    const Matrix& w = m.param(d + "input_weight");
    const Matrix& u = m.param(d + "recurrent_weight");
    const Matrix& b = m.param(d + "bias");
    const Matrix& pe = m.param(d + "peephole");
    for (int gate = 0; gate < 4; ++gate) {
      for (int j = 0; j < h; ++j) {
        const int src = gate * h + perm[static_cast<std::size_t>(j)];
        const int dst = gate * h + j;
        p.param(d + "input_weight").row(dst) = w.row(src);
        p.param(d + "bias")(0, dst) = b(0, src);
        for (int k = 0; k < h; ++k) p.param(d + "recurrent_weight")(dst, k) = u(src, perm[static_cast<std::size_t>(k)]);
      }
    }
    for (int j = 0; j < h; ++j) p.param(d + "peephole").col(j) = pe.col(perm[static_cast<std::size_t>(j)]);
  }
  const Matrix& ow = m.param("output.weight");
  for (int j = 0; j < h; ++j) {
    p.param("output.weight").col(j) = ow.col(perm[static_cast<std::size_t>(j)]);
    p.param("output.weight").col(h + j) = ow.col(h + perm[static_cast<std::size_t>(j)]);
  }
  const Batch batch = fixture::random_batch(a, 10, 12);
  CHECK(std::abs(loss(m, batch) - loss(p, batch)) < 1e-12);
  CHECK(p.param("lstm0.fwd.bias") != m.param("lstm0.fwd.bias"));
}

TEST_CASE("gradients match central differences") {
  struct Case {
    const char* name;
    ArchSpec arch;
  };
  const std::vector<Case> cases{
      {"fcnn", fixture::toy_arch(NetKind::kFcnn)},
      {"fcnn depth 3", fixture::toy_arch(NetKind::kFcnn, false, 3)},
      {"dbn", fixture::toy_arch(NetKind::kDbn)},
      {"blstm", fixture::toy_arch(NetKind::kBlstm)},
      {"blstm peepholes", fixture::toy_arch(NetKind::kBlstm, true)},
      {"blstm two pairs", fixture::toy_arch(NetKind::kBlstm, true, 4)},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const oracle::GradCheck r = fixture::gradient_check(c.arch, 21);
    CAPTURE(r.worst_rel);
    CHECK(r.checked == static_cast<long>([&] {
            long n = 0;
            for (const auto& p : init_model(c.arch, 0).params) n += p.value.size();
            return n;
          }()));
    CHECK(r.failed == 0);
  }
}

TEST_CASE("gradients are a mean over the batch") {
  for (NetKind kind : {NetKind::kFcnn, NetKind::kBlstm}) {
    const ArchSpec a = fixture::toy_arch(kind, kind == NetKind::kBlstm);
    const NetworkModel m = fixture::random_model(a, 2);
    const Batch b = fixture::random_batch(a, 3, 9);
    Batch d;
    d.inputs.resize(6, b.inputs.cols());
    d.inputs << b.inputs, b.inputs;
    d.targets = b.targets;
    d.targets.insert(d.targets.end(), b.targets.begin(), b.targets.end());
    const auto g1 = backward(m, b), g2 = backward(m, d);
    CHECK(g1.loss == doctest::Approx(g2.loss).epsilon(1e-12));
    for (std::size_t k = 0; k < g1.grads.size(); ++k) CHECK((g1.grads[k] - g2.grads[k]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("a dead output path has zero gradient") {
  const ArchSpec a = fixture::toy_arch(NetKind::kBlstm, true);
  NetworkModel m = fixture::random_model(a, 4);
  m.param("output.weight").setZero();
  const auto g = backward(m, fixture::random_batch(a, 5, 1));
  for (std::size_t k = 0; k < g.grads.size(); ++k) {
    if (m.params[k].name.rfind("lstm", 0) == 0) CHECK(g.grads[k].isZero(0.0));
  }
  CHECK(!g.grads[static_cast<std::size_t>(m.index_of("output.bias"))].isZero());

  // FCNN: a hidden unit nobody reads
  const ArchSpec f = fixture::toy_arch(NetKind::kFcnn, false, 1);
  NetworkModel n = fixture::random_model(f, 4);
  n.param("output.weight").col(2).setZero();
  const auto gf = backward(n, fixture::random_batch(f, 5, 1));
  CHECK(gf.grads[0].row(2).isZero(0.0));
  CHECK(gf.grads[1](0, 2) == 0.0);
}

TEST_CASE("cross entropy") {
  Matrix p(2, 3);
  p << 1.0, 0.0, 0.0, 0.2, 0.3, 0.5;
  CHECK(cross_entropy(p.topRows(1), {0}) == 0.0);
  CHECK(cross_entropy(p, {0, 2}) == doctest::Approx(-std::log(0.5) / 2.0));
  CHECK(cross_entropy(p.bottomRows(1), {1}) > 0.0);
}

TEST_CASE("dropout") {
  Rng rng(1);
  Matrix a = Matrix::Random(4, 5);
  const Matrix keep = a;
  apply_dropout(a, 0.0, rng);
  CHECK(a == keep);

  Matrix big = Matrix::Ones(300, 300);
  Rng r1(42);
  const Matrix mask = apply_dropout(big, 0.5, r1);
  CHECK(std::abs(mask.mean() - 1.0) < 0.01);
  const double zeros = static_cast<double>((mask.array() == 0.0).count()) / static_cast<double>(mask.size());
  CHECK(std::abs(zeros - 0.5) < 0.01);
  CHECK(((mask.array() == 0.0) || (mask.array() == 2.0)).all());
  CHECK(big == mask);

  Matrix again = Matrix::Ones(300, 300);
  Rng r2(42);
  CHECK(apply_dropout(again, 0.5, r2) == mask);

  Matrix x = Matrix::Ones(2, 2);
  CHECK_THROWS_AS(apply_dropout(x, 1.0, rng), Error);

  // inference ignores dropout: two forward passes agree
  const ArchSpec t = fixture::toy_arch(NetKind::kFcnn);
  const NetworkModel m = fixture::random_model(t, 1);
  const Batch b = fixture::random_batch(t, 3, 3);
  CHECK(forward_probabilities(m, b.inputs) == forward_probabilities(m, b.inputs));
}

TEST_CASE("CD-1 on a 2-visible 1-hidden RBM matches a hand step") {
  Rbm rbm;
  rbm.weights = Matrix(1, 2);
  rbm.weights << 0.4, -0.7;
  rbm.hidden_bias = Eigen::RowVectorXd::Constant(1, 0.1);
  rbm.visible_bias = Eigen::RowVectorXd(2);
  rbm.visible_bias << -0.2, 0.3;
  rbm.visible = VisibleUnits::kBernoulli;
  Matrix v0(1, 2);
  v0 << 1.0, 0.0;
  const double lr = 0.1;

  // replay the random stream: one uniform for the single hidden sample
  Rng replay(77);
  const double u = replay.uniform();
  const double ph0 = sig(0.4 * 1.0 + 0.1);
  const double h0 = u < ph0 ? 1.0 : 0.0;
  const double v1a = sig(h0 * 0.4 - 0.2), v1b = sig(h0 * -0.7 + 0.3);
  const double ph1 = sig(0.4 * v1a - 0.7 * v1b + 0.1);
  const double w0 = 0.4 + lr * (ph0 * 1.0 - ph1 * v1a);
  const double w1 = -0.7 + lr * (ph0 * 0.0 - ph1 * v1b);
  const double c = 0.1 + lr * (ph0 - ph1);
  const double b0 = -0.2 + lr * (1.0 - v1a), b1 = 0.3 + lr * (0.0 - v1b);

  Rng rng(77);
  const double err = cd_update(rbm, v0, 1, lr, rng);
  CHECK(rbm.weights(0, 0) == doctest::Approx(w0).epsilon(1e-12));
  CHECK(rbm.weights(0, 1) == doctest::Approx(w1).epsilon(1e-12));
  CHECK(rbm.hidden_bias(0) == doctest::Approx(c).epsilon(1e-12));
  CHECK(rbm.visible_bias(0) == doctest::Approx(b0).epsilon(1e-12));
  CHECK(rbm.visible_bias(1) == doctest::Approx(b1).epsilon(1e-12));
  CHECK(err == doctest::Approx((1.0 - v1a) * (1.0 - v1a) + v1b * v1b).epsilon(1e-12));
  CHECK_THROWS_AS(cd_update(rbm, v0, 0, lr, rng), Error);
}

TEST_CASE("Gaussian visible units reconstruct with linear means") {
  Rbm rbm;
  rbm.weights = Matrix(1, 2);
  rbm.weights << 0.5, 2.0;
  rbm.hidden_bias = Eigen::RowVectorXd::Zero(1);
  rbm.visible_bias = Eigen::RowVectorXd::Zero(2);
  rbm.visible = VisibleUnits::kGaussian;
  Matrix v(1, 2);
  v << 1.0, -1.0;
  const double ph = sig(0.5 - 2.0);
  const double want = (1.0 - 0.5 * ph) * (1.0 - 0.5 * ph) + (-1.0 - 2.0 * ph) * (-1.0 - 2.0 * ph);
  CHECK(reconstruction_error(rbm, v) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("DBN pretraining") {
  ArchSpec a = fixture::toy_arch(NetKind::kDbn);
  a.width = 8;
  const NetworkModel init = init_model(a, 3);
  Rng rng(5);
  Matrix data(20, a.flat_input());
  // two prototypes plus noise
  for (Eigen::Index r = 0; r < data.rows(); ++r)
    for (Eigen::Index c = 0; c < data.cols(); ++c)
      data(r, c) = ((r % 2 == 0) == (c % 3 == 0) ? 1.0 : 0.0) + 0.1 * rng.normal();

  TrainConfig cfg;
  cfg.batch_size = 5;
  cfg.pretrain_lr = 0.01;
  NetworkModel m = init;
  const PretrainReport rep = pretrain_dbn(m, data, cfg);
  REQUIRE(rep.reconstruction.size() == 2);
  for (const auto& layer : rep.reconstruction) {
    REQUIRE(layer.size() == 30);
    CHECK(layer.back() < layer.front());
  }
  CHECK(m.param("hidden0.weight") != init.param("hidden0.weight"));
  CHECK(m.param("output.weight") == init.param("output.weight"));

  cfg.pretrain_epochs = 0;
  NetworkModel z = init;
  pretrain_dbn(z, data, cfg);
  for (std::size_t k = 0; k < z.params.size(); ++k) CHECK(z.params[k].value == init.params[k].value);

  NetworkModel wrong = init_model(fixture::toy_arch(NetKind::kFcnn), 1);
  CHECK_THROWS_AS(pretrain_dbn(wrong, data, cfg), Error);
}

TEST_CASE("FCNN separates a linear 3-class toy problem") {
  ArchSpec a;
  a.kind = NetKind::kFcnn;
  a.width = 8;
  a.depth = 2;
  a.input_dim = 2;
  a.n_frames = 1;
  a.classes = 3;
  Rng rng(3);
  Dataset set;
  set.inputs.resize(90, 2);
  for (int i = 0; i < 90; ++i) {
    const int k = i % 3;
    const double angle = 2.0 * 3.141592653589793 * k / 3.0;
    set.inputs(i, 0) = 2.0 * std::cos(angle) + 0.3 * rng.normal();
    set.inputs(i, 1) = 2.0 * std::sin(angle) + 0.3 * rng.normal();
    set.targets.push_back(k);
  }
  TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.learning_rate = 0.1;
  cfg.max_epochs = 200;
  cfg.dropout_rate = 0.0;
  const TrainResult r = train(init_model(a, 1), set, set, cfg);
  CHECK(argmax_rows(forward_probabilities(r.model, set.inputs)) == set.targets);
}

TEST_CASE("early stopping returns the iteration-0 model when validation only worsens") {
  // two classes: raising class 0 on the training set must lower class 1
  ArchSpec a = fixture::toy_arch(NetKind::kFcnn);
  a.classes = 2;
  const NetworkModel m = init_model(a, 2);
  const Batch b = fixture::random_batch(a, 8, 3);
  Dataset tr{b.inputs, std::vector<int>(8, 0)};
  Dataset va{b.inputs, std::vector<int>(8, 1)};
  TrainConfig cfg;
  cfg.batch_size = 8;  // one iteration per epoch
  cfg.initial_patience = 3;
  cfg.dropout_rate = 0.0;
  cfg.learning_rate = 0.05;
  const TrainResult r = train(m, tr, va, cfg);
  CHECK(r.best_iteration == 0);
  for (std::size_t k = 0; k < m.params.size(); ++k) CHECK(r.model.params[k].value == m.params[k].value);
  for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i].valid_loss > r.history[i - 1].valid_loss);
  REQUIRE(!r.history.empty());
  CHECK(r.history.back().iteration == 4);  // first iteration beyond the patience
  std::ostringstream hist;
  write_history(hist, r);
  CHECK(hist.str().find("# best_iteration 0") != std::string::npos);
}

TEST_CASE("patience grows by the iteration count on a clear improvement") {
  ArchSpec a = fixture::toy_arch(NetKind::kFcnn);
  const Batch b = fixture::random_batch(a, 8, 3);
  Dataset set{b.inputs, b.targets};
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.initial_patience = 2;
  cfg.dropout_rate = 0.0;
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 20;
  const TrainResult r = train(init_model(a, 2), set, set, cfg);
  long patience = 2;
  double best = r.history.front().valid_loss;
  for (std::size_t i = 1; i < r.history.size(); ++i) {
    const auto& h = r.history[i];
    if (h.valid_loss < best) {
      if (h.valid_loss < 0.996 * best) patience += h.iteration;
      best = h.valid_loss;
    }
    CHECK(h.patience == patience);
  }
  CHECK(r.best_valid_loss == best);
}

TEST_CASE("training is deterministic for a fixed seed") {
  for (NetKind kind : {NetKind::kDbn, NetKind::kBlstm}) {
    ArchSpec a = fixture::toy_arch(kind);
    const Batch b = fixture::random_batch(a, 30, 3);
    Dataset set{b.inputs, b.targets};
    TrainConfig cfg;
    cfg.batch_size = 7;
    cfg.max_epochs = 5;
    cfg.pretrain_epochs = 2;
    cfg.rng_seed = 9;
    const TrainResult r1 = train(init_model(a, 1), set, set, cfg);
    const TrainResult r2 = train(init_model(a, 1), set, set, cfg);
    std::ostringstream s1, s2, h1, h2;
    save_model(r1.model, s1);
    save_model(r2.model, s2);
    write_history(h1, r1);
    write_history(h2, r2);
    CHECK(s1.str() == s2.str());
    CHECK(h1.str() == h2.str());
    cfg.rng_seed = 10;
    std::ostringstream s3;
    save_model(train(init_model(a, 1), set, set, cfg).model, s3);
    CHECK(s3.str() != s1.str());
  }
}

TEST_CASE("BLSTM overfits a single segment") {
  ArchSpec a;
  a.kind = NetKind::kBlstm;
  a.width = 8;
  a.depth = 2;
  a.input_dim = 24;
  a.n_frames = 3;
  Rng rng(4);
  Matrix tiled(3, 24);
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < 24; ++c) tiled(r, c) = rng.uniform();
  const ChordLabel label = parse_label("Eb:7/3");
  Dataset set;
  set.inputs = tiled.reshaped<Eigen::RowMajor>(1, tiled.size());
  set.targets = {to_state_index(label)};
  TrainConfig cfg;
  cfg.max_epochs = 300;
  cfg.dropout_rate = 0.0;
  const TrainResult r = train(init_model(a, 2), set, set, cfg);
  CHECK(predict(r.model, tiled) == label);
  CHECK(predict(r.model, tiled) == predict(r.model, tiled));
}

TEST_CASE("gradient clipping is counted") {
  ArchSpec a = fixture::toy_arch(NetKind::kBlstm);
  const Batch b = fixture::random_batch(a, 10, 1);
  Dataset set{b.inputs, b.targets};
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.clip_norm = 1e-6;
  const TrainResult r = train(fixture::random_model(a, 1), set, set, cfg);
  CHECK(r.history.back().clipped_steps == r.history.back().iteration);
}

TEST_CASE("model files") {
  TempDir dir;
  for (NetKind kind : {NetKind::kFcnn, NetKind::kDbn, NetKind::kBlstm}) {
    ArchSpec a = fixture::toy_arch(kind, kind == NetKind::kBlstm);
    a.classes = 217;
    const NetworkModel m = fixture::random_model(a, 17);
    const fs::path p = dir.path / "m.model";
    save_model(m, p);
    const NetworkModel back = load_model(p);
    CHECK(back.arch == m.arch);
    CHECK(back.seed == m.seed);
    Rng rng(1);
    for (int t = 0; t < 100; ++t) {
      Matrix x(3, 6);
      for (Eigen::Index r = 0; r < 3; ++r)
        for (Eigen::Index c = 0; c < 6; ++c) x(r, c) = rng.uniform(-2.0, 2.0);
      const Matrix flat = x.reshaped<Eigen::RowMajor>(1, 18);
      CHECK(forward_probabilities(back, flat) == forward_probabilities(m, flat));
    }
    std::ostringstream s1, s2;
    save_model(m, s1);
    save_model(back, s2);
    CHECK(s1.str() == s2.str());
  }

  const NetworkModel m = init_model(fixture::toy_arch(NetKind::kFcnn), 3);
  std::ostringstream good;
  save_model(m, good);
  const std::string text = good.str();
  CHECK(text.rfind("LVACE-MODEL 1 FCNN 5 2 6 3 4 3\nTENSOR hidden0.weight 2 5 18\n", 0) == 0);

  auto load_text = [](const std::string& s) {
    std::istringstream in(s);
    return load_model(in);
  };
  auto code_of = [&](const std::string& s) {
    try {
      load_text(s);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;  // sentinel: no error
  };
  CHECK(code_of("LVACE-MODEL 2" + text.substr(13)) == ErrorCode::kParse);
  CHECK(code_of(text.substr(0, text.size() / 2)) == ErrorCode::kParse);
  // drop the final tensor block
  CHECK(code_of(text.substr(0, text.rfind("TENSOR"))) == ErrorCode::kShapeMismatch);
  std::string renamed = text;
  renamed.replace(renamed.find("hidden1.bias"), 12, "hidden9.bias");
  CHECK(code_of(renamed) == ErrorCode::kShapeMismatch);
  CHECK_THROWS_AS(load_model(dir.path / "none.model"), Error);
}
