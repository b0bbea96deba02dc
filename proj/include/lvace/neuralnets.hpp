#pragma once

// Segment classifiers: fully connected ReLU net (FCNN), sigmoid deep belief
// net with RBM pretraining (DBN), and a bidirectional LSTM with mean pooling
// over the tiled frames (BLSTM). All arithmetic is double precision.

#include "lvace/chordvocab.hpp"
#include "lvace/common.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace lvace {

enum class NetKind { kFcnn, kDbn, kBlstm };

const char* net_kind_name(NetKind kind);
NetKind parse_net_kind(std::string_view name);

struct ArchSpec {
  NetKind kind = NetKind::kFcnn;
  int width = 800;
  // Hidden layers for FCNN/DBN. For BLSTM the LSTM layer count, forward and
  // backward counted separately, so it must be even ([800*2] = one pair).
  int depth = 2;
  int input_dim = 24;  // per frame
  int n_frames = 6;
  int classes = kNumChordStates;
  bool peepholes = false;  // BLSTM only

  int flat_input() const { return input_dim * n_frames; }
  bool operator==(const ArchSpec&) const = default;
};

void validate(const ArchSpec& arch);

struct Tensor {
  std::string name;
  int rank = 2;   // 1 for biases (stored as 1 x n)
  Matrix value;
};

struct NetworkModel {
  ArchSpec arch;
  std::uint64_t seed = 0;
  std::vector<Tensor> params;

  Matrix& param(const std::string& name);
  const Matrix& param(const std::string& name) const;
  int index_of(const std::string& name) const;
};

using Gradients = std::vector<Matrix>;

// Builds a model with the default initialization (scaled uniform weights,
// forget-gate bias +1, zero biases elsewhere).
NetworkModel init_model(const ArchSpec& arch, std::uint64_t seed);

struct Batch {
  Matrix inputs;             // B x (n_frames * input_dim), frame-major
  std::vector<int> targets;  // B state indices
};

struct DropoutState {
  double rate = 0.0;
  Rng* rng = nullptr;  // null or rate == 0 disables dropout
};

// Inverted dropout in place; returns the applied mask (already scaled).
Matrix apply_dropout(Matrix& activations, double rate, Rng& rng);

Matrix forward_probabilities(const NetworkModel& model, const Matrix& inputs);
Matrix forward_logits(const NetworkModel& model, const Matrix& inputs);
Vector forward_fcnn(const NetworkModel& model, const Vector& input);
Vector forward_blstm(const NetworkModel& model, const Matrix& frames);

// Per-direction LSTM cell states of the first layer, for inspection: rows are
// frames, columns units. Direction 0 = forward, 1 = backward.
Matrix blstm_cell_states(const NetworkModel& model, const Matrix& frames, int direction);

double cross_entropy(const Matrix& probabilities, const std::vector<int>& targets);
double loss(const NetworkModel& model, const Batch& batch);

struct LossAndGradients {
  double loss = 0.0;
  Gradients grads;
};

// Mean cross-entropy and its gradient w.r.t. every parameter.
LossAndGradients backward(const NetworkModel& model, const Batch& batch,
                          const DropoutState& dropout = {});

double global_norm(const Gradients& grads);

// --- RBM pretraining -------------------------------------------------------

enum class VisibleUnits { kGaussian, kBernoulli };

struct Rbm {
  Matrix weights;        // hidden x visible
  Eigen::RowVectorXd hidden_bias;
  Eigen::RowVectorXd visible_bias;
  VisibleUnits visible = VisibleUnits::kBernoulli;
};

// One CD-k update on a batch (rows are visible vectors). Hidden states are
// sampled row-major, one uniform per unit, at every step but the last;
// visible reconstructions use means. Returns the batch reconstruction error.
double cd_update(Rbm& rbm, const Matrix& batch, int k, double learning_rate, Rng& rng);

// Mean squared one-step mean-field reconstruction error.
double reconstruction_error(const Rbm& rbm, const Matrix& data);

struct TrainConfig {
  double learning_rate = 0.01;
  int batch_size = 100;
  double dropout_rate = 0.5;
  double early_stop_factor = 0.996;
  long initial_patience = 5000;
  int cd_steps = 10;
  int pretrain_epochs = 30;
  double pretrain_lr = 0.001;
  double adadelta_rho = 0.95;
  double adadelta_eps = 1e-6;
  double clip_norm = 5.0;  // BLSTM only
  int max_epochs = 500;
  std::uint64_t rng_seed = 0;
};

struct PretrainReport {
  std::vector<std::vector<double>> reconstruction;  // [layer][epoch]
};

PretrainReport pretrain_dbn(NetworkModel& model, const Matrix& data, const TrainConfig& cfg);

struct Dataset {
  Matrix inputs;
  std::vector<int> targets;

  std::size_t size() const { return targets.size(); }
};

struct HistoryEntry {
  int epoch = 0;
  long iteration = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  long patience = 0;
  long clipped_steps = 0;
};

struct TrainResult {
  NetworkModel model;  // parameters at best validation loss
  std::vector<HistoryEntry> history;
  PretrainReport pretrain;
  double best_valid_loss = 0.0;
  long best_iteration = 0;
  bool non_finite = false;
};

TrainResult train(NetworkModel model, const Dataset& train_set, const Dataset& valid_set,
                  const TrainConfig& cfg);

void write_history(std::ostream& out, const TrainResult& result);

// Argmax class (lowest index on ties) of one tiled segment (n_frames x dim).
int predict_state(const NetworkModel& model, const Matrix& tiled);
ChordLabel predict(const NetworkModel& model, const Matrix& tiled);

void save_model(const NetworkModel& model, std::ostream& out);
void save_model(const NetworkModel& model, const std::filesystem::path& path);
NetworkModel load_model(std::istream& in);
NetworkModel load_model(const std::filesystem::path& path);

}  // namespace lvace
