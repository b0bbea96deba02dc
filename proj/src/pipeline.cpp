#include "lvace/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numbers>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

namespace lvace {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::kParse, key + ": expected a number, got '" + value + "'");
  }
  return v;
}

long to_long(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size()) throw Error(ErrorCode::kParse, key + ": expected an integer, got '" + value + "'");
  return v;
}

int to_int(const std::string& key, const std::string& value) {
  const long v = to_long(key, value);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw Error(ErrorCode::kParse, key + ": out of range");
  }
  return static_cast<int>(v);
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "off" || value == "no") return false;
  throw Error(ErrorCode::kParse, key + ": expected true or false, got '" + value + "'");
}

FeatureKind parse_feature_kind(const std::string& value) {
  if (value == "ch") return FeatureKind::kChroma;
  if (value == "ns") return FeatureKind::kNotegram;
  throw Error(ErrorCode::kParse, "feature.kind must be ch or ns, got '" + value + "'");
}

// FNV-1a, 64 bit.
struct Fnv {
  std::uint64_t h = 14695981039346656037ULL;
  void add(const char* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(data[i]);
      h *= 1099511628211ULL;
    }
  }
  void add(const std::string& s) { add(s.data(), s.size()); }
};

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string feature_fingerprint(const RunConfig& c) {
  return "features overtone_decay=" + fmt17(c.features.overtone_decay) +
         " max_partials=" + std::to_string(c.features.max_partials) +
         " std_window=" + std::to_string(c.features.std_window_bins);
}

std::string file_hash(const fs::path& path, const std::string& salt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  Fnv fnv;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    fnv.add(buf, static_cast<std::size_t>(in.gcount()));
  }
  fnv.add(salt);
  return hex64(fnv.h);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return {};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Matrix flatten(const Matrix& tile) { return tile.reshaped<Eigen::RowMajor>(1, tile.size()); }

Matrix shift_frames(FeatureKind kind, const Matrix& frames, int semitones) {
  return kind == FeatureKind::kChroma ? pitch_shift_chroma_frames(frames, semitones)
                                      : pitch_shift_notegram_frames(frames, semitones);
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest and folds

const ManifestEntry* DatasetManifest::find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

DatasetManifest read_manifest(const fs::path& path, bool check_files) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  DatasetManifest manifest;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (fields.size() != 4 || fields[3].size() != 1 || fields[0].empty()) {
      throw Error(ErrorCode::kParse, where + ": expected <id>\\t<audio>\\t<lab>\\t<dataset letter>");
    }
    ManifestEntry e;
    e.id = fields[0];
    e.audio = fs::path(fields[1]).is_absolute() ? fs::path(fields[1]) : base / fields[1];
    e.lab = fs::path(fields[2]).is_absolute() ? fs::path(fields[2]) : base / fields[2];
    e.dataset = fields[3][0];
    if (!seen.insert(e.id).second) throw Error(ErrorCode::kParse, where + ": duplicate track id " + e.id);
    if (check_files) {
      if (!fs::exists(e.audio)) throw Error(ErrorCode::kIo, where + ": missing audio " + e.audio.string());
      if (!fs::exists(e.lab)) throw Error(ErrorCode::kIo, where + ": missing lab " + e.lab.string());
    }
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& e : manifest.entries) {
    out << e.id << '\t' << e.audio.string() << '\t' << e.lab.string() << '\t' << e.dataset << '\n';
  }
}

FoldPlan make_folds(const DatasetManifest& manifest, int k) {
  if (k < 2) throw Error(ErrorCode::kInvalidParameter, "need at least 2 folds");
  FoldPlan plan;
  plan.k = k;
  std::vector<char> datasets;
  for (const auto& e : manifest.entries) {
    if (std::find(datasets.begin(), datasets.end(), e.dataset) == datasets.end()) datasets.push_back(e.dataset);
  }
  int next = 0;
  for (char d : datasets) {
    for (const auto& e : manifest.entries) {
      if (e.dataset != d) continue;
      plan.assignment[e.id] = next;
      next = (next + 1) % k;
    }
  }
  return plan;
}

void write_folds(const fs::path& path, const FoldPlan& plan) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "# folds " << plan.k << '\n';
  for (const auto& [id, fold] : plan.assignment) out << id << '\t' << fold << '\n';
}

FoldPlan read_folds(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open folds file " + path.string());
  FoldPlan plan;
  std::string line;
  int lineno = 0;
  bool have_k = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    std::string id;
    if (!(fields >> id)) continue;
    if (id == "#") {
      std::string word;
      if (fields >> word && word == "folds" && fields >> plan.k) have_k = true;
      continue;
    }
    int fold = -1;
    if (!(fields >> fold) || fold < 0) {
      throw Error(ErrorCode::kParse, path.string() + ":" + std::to_string(lineno) + ": bad fold line");
    }
    plan.assignment[id] = fold;
  }
  if (!have_k) {
    plan.k = 0;
    for (const auto& [id, f] : plan.assignment) plan.k = std::max(plan.k, f + 1);
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Configuration

int feature_dims(FeatureKind kind) { return kind == FeatureKind::kChroma ? kChromaDims : kLogBins; }

void apply_model_name(RunConfig& config, std::string_view name) {
  static const std::regex pattern(R"(^(FCNN|DBN|BLSTM)-(\d+)seg-\[(\d+)\*(\d+)\]-(ch|ns)$)");
  std::cmatch m;
  const std::string text(name);
  if (!std::regex_match(text.c_str(), m, pattern)) {
    throw Error(ErrorCode::kParse, "bad model name '" + text + "' (expected e.g. BLSTM-6seg-[64*2]-ch)");
  }
  config.arch.kind = parse_net_kind(m[1].str());
  config.arch.n_frames = to_int("model.name", m[2].str());
  config.arch.width = to_int("model.name", m[3].str());
  config.arch.depth = to_int("model.name", m[4].str());
  config.feature = parse_feature_kind(m[5].str());
  config.arch.input_dim = feature_dims(config.feature);
}

std::string model_name(const RunConfig& config) {
  return std::string(net_kind_name(config.arch.kind)) + "-" + std::to_string(config.arch.n_frames) + "seg-[" +
         std::to_string(config.arch.width) + "*" + std::to_string(config.arch.depth) + "]-" +
         (config.feature == FeatureKind::kChroma ? "ch" : "ns");
}

void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  TrainConfig& t = c.train;
  if (key == "feature.kind") {
    c.feature = parse_feature_kind(value);
    c.arch.input_dim = feature_dims(c.feature);
  } else if (key == "feature.s" || key == "feature.overtone_decay") {
    c.features.overtone_decay = to_double(key, value);
  } else if (key == "feature.max_partials") {
    c.features.max_partials = to_int(key, value);
  } else if (key == "feature.std_window_bins" || key == "feature.std_window") {
    c.features.std_window_bins = to_int(key, value);
  } else if (key == "hmm.self_weight") {
    c.self_weight = to_double(key, value);
  } else if (key == "model.name") {
    apply_model_name(c, value);
  } else if (key == "model.kind") {
    c.arch.kind = parse_net_kind(value);
  } else if (key == "model.width") {
    c.arch.width = to_int(key, value);
  } else if (key == "model.depth") {
    c.arch.depth = to_int(key, value);
  } else if (key == "model.nseg" || key == "tiling.n") {
    c.arch.n_frames = to_int(key, value);
  } else if (key == "model.peepholes") {
    c.arch.peepholes = to_bool(key, value);
  } else if (key == "train.learning_rate") {
    t.learning_rate = to_double(key, value);
  } else if (key == "train.batch_size") {
    t.batch_size = to_int(key, value);
  } else if (key == "train.dropout") {
    t.dropout_rate = to_double(key, value);
  } else if (key == "train.early_stop_factor") {
    t.early_stop_factor = to_double(key, value);
  } else if (key == "train.patience") {
    t.initial_patience = to_long(key, value);
  } else if (key == "train.cd_steps") {
    t.cd_steps = to_int(key, value);
  } else if (key == "train.pretrain_epochs") {
    t.pretrain_epochs = to_int(key, value);
  } else if (key == "train.pretrain_lr") {
    t.pretrain_lr = to_double(key, value);
  } else if (key == "train.adadelta_rho") {
    t.adadelta_rho = to_double(key, value);
  } else if (key == "train.adadelta_eps") {
    t.adadelta_eps = to_double(key, value);
  } else if (key == "train.clip_norm") {
    t.clip_norm = to_double(key, value);
  } else if (key == "train.max_epochs") {
    t.max_epochs = to_int(key, value);
  } else if (key == "train.augment") {
    c.augment = to_bool(key, value);
  } else if (key == "train.validation_fraction") {
    c.validation_fraction = to_double(key, value);
  } else if (key == "run.seed") {
    c.seed = static_cast<std::uint64_t>(to_long(key, value));
  } else if (key == "run.jobs") {
    c.jobs = to_int(key, value);
  } else {
    throw Error(ErrorCode::kParse, "unknown config key '" + key + "'");
  }
}

RunConfig parse_config_text(std::string_view text, const std::string& source) {
  RunConfig config;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw Error(ErrorCode::kParse, where + "expected key = value");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    try {
      set_config_value(config, key, value);
    } catch (const Error& e) {
      throw Error(e.code(), where + e.what());
    }
  }
  validate(config);
  return config;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, "cannot open config " + path.string());
  return parse_config_text(read_text(path), path.string());
}

void validate(const RunConfig& c) {
  validate(c.arch);
  if (c.arch.input_dim != feature_dims(c.feature)) {
    throw Error(ErrorCode::kInvalidParameter, "model input dimension " + std::to_string(c.arch.input_dim) +
                                                  " does not match the feature kind");
  }
  if (c.arch.classes != kNumChordStates) throw Error(ErrorCode::kInvalidParameter, "model must have 217 classes");
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidParameter, "validation fraction must be in [0, 1)");
  }
  if (c.jobs < 1) throw Error(ErrorCode::kInvalidParameter, "jobs must be >= 1");
  if (!(c.self_weight > 0.0)) throw Error(ErrorCode::kInvalidParameter, "hmm.self_weight must be > 0");
  if (c.features.max_partials < 1 || c.features.std_window_bins < 1 || !(c.features.overtone_decay > 0.0)) {
    throw Error(ErrorCode::kInvalidParameter, "feature parameters must be positive");
  }
  const TrainConfig& t = c.train;
  if (t.batch_size < 1 || t.max_epochs < 0 || t.initial_patience < 1 || t.cd_steps < 1 ||
      !(t.dropout_rate >= 0.0 && t.dropout_rate < 1.0) || !(t.learning_rate > 0.0)) {
    throw Error(ErrorCode::kInvalidParameter, "invalid training parameters");
  }
}

std::string config_fingerprint(const RunConfig& c) {
  const TrainConfig& t = c.train;
  std::ostringstream out;
  out << feature_fingerprint(c) << " model=" << model_name(c) << " peepholes=" << c.arch.peepholes
      << " self_weight=" << fmt17(c.self_weight) << " lr=" << fmt17(t.learning_rate) << " batch=" << t.batch_size
      << " dropout=" << fmt17(t.dropout_rate) << " factor=" << fmt17(t.early_stop_factor)
      << " patience=" << t.initial_patience << " cd=" << t.cd_steps << " pretrain_epochs=" << t.pretrain_epochs
      << " pretrain_lr=" << fmt17(t.pretrain_lr) << " rho=" << fmt17(t.adadelta_rho)
      << " eps=" << fmt17(t.adadelta_eps) << " clip=" << fmt17(t.clip_norm) << " max_epochs=" << t.max_epochs
      << " augment=" << c.augment << " valid=" << fmt17(c.validation_fraction) << " seed=" << c.seed;
  return out.str();
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Extraction

FeaturePaths feature_paths(const fs::path& dir, const std::string& id) {
  return {dir / (id + ".chroma"), dir / (id + ".notegram"), dir / (id + ".stamp")};
}

ExtractReport extract_corpus(const DatasetManifest& manifest, const RunConfig& config,
                             const fs::path& feature_dir) {
  ExtractReport report;
  if (manifest.entries.empty()) return report;
  fs::create_directories(feature_dir);
  std::mutex mutex;
  const std::string salt = feature_fingerprint(config);
  parallel_for(manifest.entries.size(), config.jobs, [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    try {
      const FeaturePaths paths = feature_paths(feature_dir, e.id);
      const std::string stamp = file_hash(e.audio, salt);
      if (fs::exists(paths.chroma) && fs::exists(paths.notegram) && trim(read_text(paths.stamp)) == stamp) {
        std::lock_guard lock(mutex);
        report.skipped.push_back(e.id);
        return;
      }
      const TrackFeatures f = extract_features(load_and_resample(e.audio), config.features);
      write_feature_file(paths.notegram, FeatureKind::kNotegram, f.notegram.frames, f.notegram.hop_seconds);
      write_feature_file(paths.chroma, FeatureKind::kChroma, f.chroma.frames, f.chroma.hop_seconds);
      std::ofstream(paths.stamp) << stamp << '\n';
      std::lock_guard lock(mutex);
      report.written.push_back(e.id);
    } catch (const std::exception& ex) {
      std::lock_guard lock(mutex);
      report.failures.push_back({e.id, ex.what()});
    }
  });
  std::sort(report.written.begin(), report.written.end());
  std::sort(report.skipped.begin(), report.skipped.end());
  std::sort(report.failures.begin(), report.failures.end(),
            [](const ItemFailure& a, const ItemFailure& b) { return a.id < b.id; });
  return report;
}

LoadedFeatures load_features(const fs::path& feature_dir, const std::string& id, const RunConfig& config) {
  const FeaturePaths paths = feature_paths(feature_dir, id);
  if (!fs::exists(paths.chroma) || (config.feature == FeatureKind::kNotegram && !fs::exists(paths.notegram))) {
    throw Error(ErrorCode::kMissingFeatures, "no extracted features for track " + id);
  }
  LoadedFeatures out;
  const FeatureFile chroma = read_feature_file(paths.chroma);
  out.chroma = {chroma.frames, chroma.hop_seconds};
  if (config.feature == FeatureKind::kChroma) {
    out.input = chroma.frames;
  } else {
    out.input = read_feature_file(paths.notegram).frames;
    if (out.input.rows() != chroma.frames.rows()) {
      throw Error(ErrorCode::kShapeMismatch, "notegram and chromagram frame counts differ for " + id);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

SampleSet build_samples(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                        const fs::path& feature_dir, const RunConfig& config, bool augment) {
  const int n = config.arch.n_frames;
  std::vector<Matrix> rows;
  SampleSet set;
  for (const auto& id : ids) {
    const ManifestEntry* entry = manifest.find(id);
    if (!entry) throw Error(ErrorCode::kMissingTrack, "track " + id + " is not in the manifest");
    const LoadedFeatures f = load_features(feature_dir, id, config);
    const auto lab = parse_lab(entry->lab, LabelParsing::kLenient);
    const auto segments =
        segment_by_ground_truth(lab, f.chroma.hop_seconds, static_cast<int>(f.input.rows()));
    for (const auto& s : segments) {
      const Matrix tile = tile_segment(f.input.middleRows(s.start_frame, s.length()), n);
      const ChordLabel label = s.label.value_or(ChordLabel::no_chord());
      if (!augment) {
        rows.push_back(flatten(tile));
        set.data.targets.push_back(to_state_index(label));
        set.track_ids.push_back(id);
        set.shifts.push_back(0);
        continue;
      }
      for (int k = -6; k <= 5; ++k) {
        rows.push_back(flatten(shift_frames(config.feature, tile, k)));
        set.data.targets.push_back(to_state_index(transpose_label(label, k)));
        set.track_ids.push_back(id);
        set.shifts.push_back(k);
      }
    }
  }
  set.data.inputs.resize(static_cast<Eigen::Index>(rows.size()), config.arch.flat_input());
  for (std::size_t i = 0; i < rows.size(); ++i) set.data.inputs.row(static_cast<Eigen::Index>(i)) = rows[i];
  return set;
}

FoldSplit split_fold(const DatasetManifest& manifest, const FoldPlan* folds, int fold, const RunConfig& config) {
  FoldSplit split;
  std::vector<std::string> pool;
  for (const auto& e : manifest.entries) {
    int f = -1;
    if (folds) {
      const auto it = folds->assignment.find(e.id);
      if (it == folds->assignment.end()) throw Error(ErrorCode::kMissingTrack, "track " + e.id + " has no fold");
      f = it->second;
    }
    if (fold >= 0 && f == fold) {
      split.test.push_back(e.id);
    } else {
      pool.push_back(e.id);
    }
  }
  if (pool.empty()) throw Error(ErrorCode::kInvalidArgument, "no training tracks for fold " + std::to_string(fold));
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(config.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(fold + 1));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  std::size_t n_valid = static_cast<std::size_t>(std::lround(config.validation_fraction * pool.size()));
  if (pool.size() >= 2) n_valid = std::clamp<std::size_t>(n_valid, 1, pool.size() - 1);
  std::vector<bool> is_valid(pool.size(), false);
  for (std::size_t i = 0; i < n_valid && pool.size() >= 2; ++i) is_valid[order[i]] = true;
  for (std::size_t i = 0; i < pool.size(); ++i) (is_valid[i] ? split.valid : split.train).push_back(pool[i]);
  // A single training track doubles as its own validation set.
  if (split.valid.empty()) split.valid = split.train;
  return split;
}

FoldTraining train_fold(const DatasetManifest& manifest, const FoldPlan* folds, int fold,
                        const fs::path& feature_dir, const RunConfig& config) {
  validate(config);
  FoldTraining run;
  run.fold = fold;
  run.split = split_fold(manifest, folds, fold, config);
  run.train_samples = build_samples(manifest, run.split.train, feature_dir, config, config.augment);
  run.valid_samples = build_samples(manifest, run.split.valid, feature_dir, config, false);
  TrainConfig tc = config.train;
  tc.rng_seed = config.seed;
  run.result = train(init_model(config.arch, config.seed), run.train_samples.data, run.valid_samples.data, tc);
  if (run.result.non_finite) throw Error(ErrorCode::kNonFiniteLoss, "training diverged (non-finite loss)");
  return run;
}

void write_fold_outputs(const fs::path& dir, const std::string& stem, const FoldTraining& run) {
  fs::create_directories(dir);
  save_model(run.result.model, dir / (stem + ".model"));
  {
    std::ofstream out(dir / (stem + ".history"));
    write_history(out, run.result);
  }
  std::ofstream out(dir / (stem + ".samples"));
  if (!out) throw Error(ErrorCode::kIo, "cannot write samples file");
  out << "# role track shift state\n";
  for (std::size_t i = 0; i < run.train_samples.track_ids.size(); ++i) {
    out << "train " << run.train_samples.track_ids[i] << ' ' << run.train_samples.shifts[i] << ' '
        << run.train_samples.data.targets[i] << '\n';
  }
  for (std::size_t i = 0; i < run.valid_samples.track_ids.size(); ++i) {
    out << "valid " << run.valid_samples.track_ids[i] << ' ' << run.valid_samples.shifts[i] << ' '
        << run.valid_samples.data.targets[i] << '\n';
  }
  for (const auto& id : run.split.test) out << "test " << id << '\n';
}

// ---------------------------------------------------------------------------
// Prediction

LoadedFeatures features_from_audio(const AudioBuffer& audio, const RunConfig& config) {
  TrackFeatures f = extract_features(audio, config.features);
  LoadedFeatures out;
  out.input = config.feature == FeatureKind::kChroma ? f.chroma.frames : f.notegram.frames;
  out.chroma = std::move(f.chroma);
  return out;
}

std::vector<TimedLabel> predict_labels(const NetworkModel& model, const LoadedFeatures& features,
                                       const RunConfig& config) {
  if (features.input.cols() != model.arch.input_dim) {
    throw Error(ErrorCode::kShapeMismatch, "model expects " + std::to_string(model.arch.input_dim) +
                                               "-dim frames, features have " +
                                               std::to_string(features.input.cols()));
  }
  if (features.input.rows() != features.chroma.frames.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "feature frame counts differ");
  }
  const HmmSpec hmm = build_hmm(config.self_weight);
  const auto segments = viterbi(hmm, features.chroma);
  std::vector<TimedLabel> out;
  for (const auto& s : segments) {
    const Matrix tile = tile_segment(features.input.middleRows(s.start_frame, s.length()), model.arch.n_frames);
    // A block with no energy at all carries no chord evidence.
    const ChordLabel label = tile.isZero(0.0) ? ChordLabel::no_chord() : predict(model, tile);
    out.push_back({frame_to_seconds(s.start_frame, features.chroma.hop_seconds),
                   frame_to_seconds(s.end_frame, features.chroma.hop_seconds), label});
  }
  return out;
}

PredictReport predict_files(const NetworkModel& model, const std::vector<fs::path>& inputs,
                            const fs::path& out_dir, const RunConfig& config) {
  PredictReport report;
  if (inputs.empty()) return report;
  fs::create_directories(out_dir);
  std::mutex mutex;
  parallel_for(inputs.size(), config.jobs, [&](std::size_t i) {
    const fs::path& in = inputs[i];
    try {
      LoadedFeatures f;
      if (in.extension() == ".wav" || in.extension() == ".WAV") {
        f = features_from_audio(load_and_resample(in), config);
      } else {
        if (!fs::exists(in)) throw Error(ErrorCode::kMissingFeatures, "no such feature file " + in.string());
        const FeatureFile chroma = read_feature_file(in);
        if (chroma.kind != FeatureKind::kChroma) {
          throw Error(ErrorCode::kInvalidArgument, in.string() + " is not a chromagram file");
        }
        f.chroma = {chroma.frames, chroma.hop_seconds};
        if (config.feature == FeatureKind::kChroma) {
          f.input = chroma.frames;
        } else {
          fs::path ng = in;
          ng.replace_extension(".notegram");
          if (!fs::exists(ng)) throw Error(ErrorCode::kMissingFeatures, "missing " + ng.string());
          f.input = read_feature_file(ng).frames;
        }
      }
      const fs::path out = out_dir / (in.stem().string() + ".lab");
      write_lab(out, predict_labels(model, f, config));
      std::lock_guard lock(mutex);
      report.written.push_back(out.string());
    } catch (const std::exception& ex) {
      std::lock_guard lock(mutex);
      report.failures.push_back({in.string(), ex.what()});
    }
  });
  std::sort(report.written.begin(), report.written.end());
  return report;
}

// ---------------------------------------------------------------------------
// Evaluation

DirEvaluation evaluate_dirs(const fs::path& pred_dir, const fs::path& truth_dir, EvalVocabulary vocab) {
  if (!fs::is_directory(truth_dir)) throw Error(ErrorCode::kIo, "no truth directory " + truth_dir.string());
  if (!fs::is_directory(pred_dir)) throw Error(ErrorCode::kIo, "no prediction directory " + pred_dir.string());
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(truth_dir)) {
    if (entry.path().extension() == ".lab") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  DirEvaluation out;
  std::vector<TrackPair> tracks;
  for (const auto& id : ids) {
    const fs::path pred = pred_dir / (id + ".lab");
    if (!fs::exists(pred)) {
      out.missing.push_back(id);
      continue;
    }
    try {
      tracks.push_back({id, parse_lab(pred), parse_lab(truth_dir / (id + ".lab"))});
    } catch (const std::exception& ex) {
      out.failures.push_back({id, ex.what()});
    }
  }
  out.report.vocab = vocab;
  if (!tracks.empty()) out.report = evaluate(tracks, vocab);
  return out;
}

// ---------------------------------------------------------------------------
// Synthesis

namespace {

constexpr double kToneAmplitude = 0.1;
constexpr double kNoiseRms = 0.1;  // -20 dBFS
constexpr int kPartials = 8;
constexpr double kPartialDecay = 0.7;
constexpr double kRampSeconds = 0.01;

double midi_frequency(int midi) { return 440.0 * std::pow(2.0, (midi - 69) / 12.0); }

}  // namespace

SynthTrack synth_track(const std::vector<SynthChord>& chords, double sample_rate, std::uint64_t seed) {
  if (!(sample_rate > 0.0)) throw Error(ErrorCode::kInvalidParameter, "sample rate must be positive");
  SynthTrack track;
  track.audio.sample_rate = sample_rate;
  double total = 0.0;
  for (const auto& c : chords) {
    if (!(c.duration > 0.0)) throw Error(ErrorCode::kInvalidParameter, "chord durations must be positive");
    track.lab.push_back({total, total + c.duration, c.label});
    total += c.duration;
  }
  const auto n = static_cast<std::size_t>(std::llround(total * sample_rate));
  track.audio.samples.assign(n, 0.0);
  Rng rng(seed);
  for (auto& s : track.audio.samples) s = kNoiseRms * rng.normal();

  const auto ramp = static_cast<std::size_t>(std::llround(kRampSeconds * sample_rate));
  for (const auto& seg : track.lab) {
    const auto begin = static_cast<std::size_t>(std::llround(seg.start_sec * sample_rate));
    const auto end = std::min(n, static_cast<std::size_t>(std::llround(seg.end_sec * sample_rate)));
    if (seg.label.is_no_chord() || end <= begin) continue;
    const ChordTemplate t = template_of(seg.label);
    std::vector<int> notes{36 + t.bass.value()};
    for (const auto pc : t.pitch_classes) notes.push_back(60 + pc.value());
    const std::size_t len = end - begin;
    const std::size_t r = std::min(ramp, len / 2);
    for (int midi : notes) {
      const double f0 = midi_frequency(midi);
      for (int h = 1; h <= kPartials; ++h) {
        const double f = f0 * h;
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        if (f >= 0.5 * sample_rate) continue;
        const double amp = kToneAmplitude * std::pow(kPartialDecay, h - 1);
        const double w = 2.0 * std::numbers::pi * f / sample_rate;
        for (std::size_t i = 0; i < len; ++i) {
          double env = 1.0;
          if (r > 0 && i < r) env = 0.5 * (1.0 - std::cos(std::numbers::pi * static_cast<double>(i) / r));
          if (r > 0 && len - 1 - i < r) {
            env = std::min(env, 0.5 * (1.0 - std::cos(std::numbers::pi * static_cast<double>(len - 1 - i) / r)));
          }
          track.audio.samples[begin + i] += env * amp * std::sin(w * static_cast<double>(begin + i) + phase);
        }
      }
    }
  }
  return track;
}

std::vector<SynthChord> random_chord_sequence(int count, Rng& rng, double min_duration, double max_duration) {
  if (count < 0 || !(min_duration > 0.0) || max_duration < min_duration) {
    throw Error(ErrorCode::kInvalidParameter, "bad chord sequence parameters");
  }
  std::vector<SynthChord> out;
  int previous = -1;
  for (int i = 0; i < count; ++i) {
    int state = previous;
    while (state == previous) state = static_cast<int>(rng.index(kNoChordState));
    previous = state;
    out.push_back({from_state_index(state), rng.uniform(min_duration, max_duration)});
  }
  return out;
}

DatasetManifest synth_corpus(const fs::path& dir, const SynthCorpusOptions& options) {
  fs::create_directories(dir);
  DatasetManifest manifest;
  for (int t = 0; t < options.tracks; ++t) {
    char id[64];
    std::snprintf(id, sizeof id, "%s%03d", options.prefix.c_str(), t);
    const std::uint64_t track_seed = options.seed * 1000003ULL + static_cast<std::uint64_t>(t);
    Rng rng(track_seed);
    const auto chords = random_chord_sequence(options.chords_per_track, rng, options.min_duration,
                                              options.max_duration);
    const SynthTrack track = synth_track(chords, options.sample_rate, track_seed ^ 0x5bd1e995ULL);
    write_wav(dir / (std::string(id) + ".wav"), track.audio);
    write_lab(dir / (std::string(id) + ".lab"), track.lab);
    manifest.entries.push_back({id, std::string(id) + ".wav", std::string(id) + ".lab", 'S'});
  }
  write_manifest(dir / "manifest.tsv", manifest);
  for (auto& e : manifest.entries) {
    e.audio = dir / e.audio;
    e.lab = dir / e.lab;
  }
  return manifest;
}

}  // namespace lvace
