#include "clc/trainer.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "clc/metrics.hpp"
#include "clc/sinkhorn.hpp"
#include "clc/version.hpp"

namespace clc {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool log_enabled() {
  static const bool quiet = []() {
    const char* v = std::getenv("CLC_LOG");
    return v != nullptr && (std::strcmp(v, "quiet") == 0 || std::strcmp(v, "0") == 0);
  }();
  return !quiet;
}

}  // namespace

std::vector<std::string> validate_config(const TrainConfig& cfg) {
  std::vector<std::string> errors;
  auto bad = [&](const std::string& msg) { errors.push_back(msg); };
  if (!(cfg.t > 0.0)) bad("t: must be > 0");
  if (!(cfg.t <= cfg.tau)) bad("t: must be <= tau");
  if (!(cfg.tau <= 1.0)) bad("tau: must be <= 1");
  if (!(cfg.tau > 0.0)) bad("tau: must be > 0");
  if (cfg.alpha < 0.0) bad("alpha: must be >= 0");
  if (!(cfg.epsilon > 0.0)) bad("epsilon: must be > 0");
  if (cfg.sinkhorn_iterations < 1) bad("sinkhorn_iterations: must be >= 1");
  if (cfg.learning_rate < 0.0) bad("learning_rate: must be >= 0");
  if (!(cfg.sgd_momentum >= 0.0 && cfg.sgd_momentum < 1.0)) {
    bad("sgd_momentum: must lie in [0, 1)");
  }
  if (cfg.weight_decay < 0.0) bad("weight_decay: must be >= 0");
  if (cfg.batch_size < 2) bad("batch_size: must be >= 2");
  if (!(cfg.ema_momentum >= 0.0 && cfg.ema_momentum <= 1.0)) {
    bad("ema_momentum: must lie in [0, 1]");
  }
  if (cfg.encoder_mode == TrainConfig::EncoderMode::kMomentumQueue && cfg.queue_capacity < 1) {
    bad("queue_capacity: must be >= 1 in momentum-queue mode");
  }
  if (cfg.cluster_dim == 1) bad("cluster_dim: must be 0 (infer) or >= 2");
  if (cfg.instance_dim < 1) bad("instance_dim: must be >= 1");
  if (cfg.noise_sigma < 0.0) bad("noise_sigma: must be >= 0");
  if (!(cfg.holdout_fraction >= 0.0 && cfg.holdout_fraction < 1.0)) {
    bad("holdout_fraction: must lie in [0, 1)");
  }
  if (cfg.eval_every < 1) bad("eval_every: must be >= 1");
  if (!(cfg.self_label_threshold > 0.0 && cfg.self_label_threshold <= 1.0)) {
    bad("self_label_threshold: must lie in (0, 1]");
  }
  return errors;
}

void require_valid(const TrainConfig& cfg) {
  const std::vector<std::string> errors = validate_config(cfg);
  if (errors.empty()) return;
  std::string joined = "invalid config:";
  for (const std::string& e : errors) joined += "\n  " + e;
  throw ConfigError(joined);
}

namespace {

std::string schedule_name(TrainConfig::Schedule s) {
  return s == TrainConfig::Schedule::kConstant ? "constant" : "cosine";
}

std::string mode_name(TrainConfig::EncoderMode m) {
  return m == TrainConfig::EncoderMode::kInBatch ? "in-batch" : "momentum-queue";
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string widths_to_text(const std::vector<std::size_t>& widths) {
  std::string out;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(widths[i]);
  }
  return out;
}

}  // namespace

std::string config_to_text(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "alpha = " << format_double(cfg.alpha) << '\n'
     << "tau = " << format_double(cfg.tau) << '\n'
     << "t = " << format_double(cfg.t) << '\n'
     << "epsilon = " << format_double(cfg.epsilon) << '\n'
     << "sinkhorn_iterations = " << cfg.sinkhorn_iterations << '\n'
     << "sinkhorn_scale_by_t = " << (cfg.sinkhorn_scale_by_t ? "true" : "false") << '\n'
     << "learning_rate = " << format_double(cfg.learning_rate) << '\n'
     << "sgd_momentum = " << format_double(cfg.sgd_momentum) << '\n'
     << "weight_decay = " << format_double(cfg.weight_decay) << '\n'
     << "schedule = " << schedule_name(cfg.schedule) << '\n'
     << "epochs = " << cfg.epochs << '\n'
     << "batch_size = " << cfg.batch_size << '\n'
     << "encoder_mode = " << mode_name(cfg.encoder_mode) << '\n'
     << "ema_momentum = " << format_double(cfg.ema_momentum) << '\n'
     << "queue_capacity = " << cfg.queue_capacity << '\n'
     << "hidden_widths = " << widths_to_text(cfg.hidden_widths) << '\n'
     << "cluster_dim = " << cfg.cluster_dim << '\n'
     << "instance_dim = " << cfg.instance_dim << '\n'
     << "normalize_parts = " << (cfg.normalize_parts ? "true" : "false") << '\n'
     << "noise_sigma = " << format_double(cfg.noise_sigma) << '\n'
     << "holdout_fraction = " << format_double(cfg.holdout_fraction) << '\n'
     << "eval_every = " << cfg.eval_every << '\n'
     << "self_label = " << (cfg.self_label_enabled ? "true" : "false") << '\n'
     << "self_label_threshold = " << format_double(cfg.self_label_threshold) << '\n'
     << "self_label_epochs = " << cfg.self_label_epochs << '\n'
     << "seed = " << cfg.seed << '\n';
  return os.str();
}

namespace {

double parse_double_value(const std::string& key, const std::string& value) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ParseError("config: bad numeric value for '" + key + "': " + value);
  }
  return v;
}

std::uint64_t parse_u64_value(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ParseError("config: bad integer value for '" + key + "': " + value);
  }
  return v;
}

bool parse_bool_value(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ParseError("config: bad boolean value for '" + key + "': " + value);
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  std::size_t e = s.find_last_not_of(" \t");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig parse_config(std::istream& in) {
  TrainConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key == "alpha") cfg.alpha = parse_double_value(key, value);
    else if (key == "tau") cfg.tau = parse_double_value(key, value);
    else if (key == "t") cfg.t = parse_double_value(key, value);
    else if (key == "epsilon") cfg.epsilon = parse_double_value(key, value);
    else if (key == "sinkhorn_iterations") cfg.sinkhorn_iterations = parse_u64_value(key, value);
    else if (key == "sinkhorn_scale_by_t") cfg.sinkhorn_scale_by_t = parse_bool_value(key, value);
    else if (key == "learning_rate") cfg.learning_rate = parse_double_value(key, value);
    else if (key == "sgd_momentum") cfg.sgd_momentum = parse_double_value(key, value);
    else if (key == "weight_decay") cfg.weight_decay = parse_double_value(key, value);
    else if (key == "schedule") {
      if (value == "constant") cfg.schedule = TrainConfig::Schedule::kConstant;
      else if (value == "cosine") cfg.schedule = TrainConfig::Schedule::kCosine;
      else throw ParseError("config: schedule must be constant or cosine, got " + value);
    } else if (key == "epochs") cfg.epochs = parse_u64_value(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_u64_value(key, value);
    else if (key == "encoder_mode") {
      if (value == "in-batch") cfg.encoder_mode = TrainConfig::EncoderMode::kInBatch;
      else if (value == "momentum-queue") {
        cfg.encoder_mode = TrainConfig::EncoderMode::kMomentumQueue;
      } else {
        throw ParseError("config: encoder_mode must be in-batch or momentum-queue, got " +
                         value);
      }
    } else if (key == "ema_momentum") cfg.ema_momentum = parse_double_value(key, value);
    else if (key == "queue_capacity") cfg.queue_capacity = parse_u64_value(key, value);
    else if (key == "hidden_widths") {
      cfg.hidden_widths.clear();
      if (!value.empty()) {
        std::size_t start = 0;
        while (true) {
          const std::size_t comma = value.find(',', start);
          const std::string cell = trim(value.substr(
              start, comma == std::string::npos ? std::string::npos : comma - start));
          cfg.hidden_widths.push_back(parse_u64_value(key, cell));
          if (comma == std::string::npos) break;
          start = comma + 1;
        }
      }
    } else if (key == "cluster_dim") cfg.cluster_dim = parse_u64_value(key, value);
    else if (key == "instance_dim") cfg.instance_dim = parse_u64_value(key, value);
    else if (key == "normalize_parts") cfg.normalize_parts = parse_bool_value(key, value);
    else if (key == "noise_sigma") cfg.noise_sigma = parse_double_value(key, value);
    else if (key == "holdout_fraction") cfg.holdout_fraction = parse_double_value(key, value);
    else if (key == "eval_every") cfg.eval_every = parse_u64_value(key, value);
    else if (key == "self_label") cfg.self_label_enabled = parse_bool_value(key, value);
    else if (key == "self_label_threshold") {
      cfg.self_label_threshold = parse_double_value(key, value);
    } else if (key == "self_label_epochs") cfg.self_label_epochs = parse_u64_value(key, value);
    else if (key == "seed") cfg.seed = parse_u64_value(key, value);
    else throw ParseError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                          "'");
  }
  return cfg;
}

TrainConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  return parse_config(in);
}

std::string config_to_json_string(const TrainConfig& cfg) {
  nlohmann::json j{
      {"alpha", cfg.alpha},
      {"tau", cfg.tau},
      {"t", cfg.t},
      {"epsilon", cfg.epsilon},
      {"sinkhorn_iterations", cfg.sinkhorn_iterations},
      {"sinkhorn_scale_by_t", cfg.sinkhorn_scale_by_t},
      {"learning_rate", cfg.learning_rate},
      {"sgd_momentum", cfg.sgd_momentum},
      {"weight_decay", cfg.weight_decay},
      {"schedule", schedule_name(cfg.schedule)},
      {"epochs", cfg.epochs},
      {"batch_size", cfg.batch_size},
      {"encoder_mode", mode_name(cfg.encoder_mode)},
      {"ema_momentum", cfg.ema_momentum},
      {"queue_capacity", cfg.queue_capacity},
      {"hidden_widths", cfg.hidden_widths},
      {"cluster_dim", cfg.cluster_dim},
      {"instance_dim", cfg.instance_dim},
      {"normalize_parts", cfg.normalize_parts},
      {"noise_sigma", cfg.noise_sigma},
      {"holdout_fraction", cfg.holdout_fraction},
      {"eval_every", cfg.eval_every},
      {"self_label", cfg.self_label_enabled},
      {"self_label_threshold", cfg.self_label_threshold},
      {"self_label_epochs", cfg.self_label_epochs},
      {"seed", cfg.seed},
  };
  return j.dump();
}

double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (cfg.schedule == TrainConfig::Schedule::kConstant) return cfg.learning_rate;
  if (total_steps <= 1) return cfg.learning_rate;
  const double progress =
      static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(kPi * std::min(progress, 1.0)));
}

OptimizerState OptimizerState::zeros_like(const Params& params) {
  OptimizerState s;
  for (const Matrix& w : params.weights) s.weight_velocity.push_back(Matrix(w.rows(), w.cols()));
  for (const Matrix& b : params.biases) s.bias_velocity.push_back(Matrix(b.rows(), b.cols()));
  return s;
}

namespace {

// v <- mu v + (g + wd p); p <- p - lr v
void sgd_update(Matrix& param, Matrix& velocity, const Matrix& grad, double lr, double momentum,
                double weight_decay) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.data()[i] + weight_decay * param.data()[i];
    velocity.data()[i] = momentum * velocity.data()[i] + g;
    param.data()[i] -= lr * velocity.data()[i];
  }
}

AugmentationPolicy weak_policy(const TrainConfig& cfg) {
  return AugmentationPolicy::weak(cfg.noise_sigma);
}

Matrix sinkhorn_input(const Matrix& zc, const TrainConfig& cfg) {
  return cfg.sinkhorn_scale_by_t ? scale(zc, 1.0 / cfg.t) : zc;
}

}  // namespace

LossBreakdown train_step(TrainState& state, const Matrix& batch, const TrainConfig& cfg,
                         double lr) {
  const bool momentum_mode = cfg.encoder_mode == TrainConfig::EncoderMode::kMomentumQueue;
  auto [view_q, view_k] = two_views(batch, weak_policy(cfg), state.rng);

  // Key representations never carry gradient, in either mode.
  const Params& key_params =
      momentum_mode ? state.key.value().params : state.params;
  const Representation rep_k = forward(state.spec, key_params, view_k, cfg.normalize_parts);

  Tape tape;
  ForwardVars q = forward_node(tape, state.spec, state.params, view_q, cfg.normalize_parts);

  // Assignments are plain data: the stop-gradient contract of the recipe.
  const SinkhornConfig sk{cfg.epsilon, cfg.sinkhorn_iterations, 1e-9};
  const AssignmentMatrix q_q =
      sinkhorn_solve(sinkhorn_input(q.zc.value(), cfg), sk, SinkhornMode::kFixedIterations);
  const AssignmentMatrix q_k =
      sinkhorn_solve(sinkhorn_input(rep_k.zc, cfg), sk, SinkhornMode::kFixedIterations);

  Var s = tape.add(tape.matmul(q.zc, tape.constant(transpose(rep_k.zc))),
                   tape.matmul(q.zn, tape.constant(transpose(rep_k.zn))));
  if (momentum_mode && state.queue.has_value() && !state.queue->empty()) {
    auto [queue_zc, queue_zn] = state.queue->negatives();
    Var s_queue = tape.add(tape.matmul(q.zc, tape.constant(transpose(queue_zc))),
                           tape.matmul(q.zn, tape.constant(transpose(queue_zn))));
    s = tape.concat_cols(s, s_queue);
  }

  Var loss_nce = infonce_node(tape, s, cfg.tau);
  Var loss_ce = equipartition_ce_node(tape, q.zc, rep_k.zc, q_q, q_k, cfg.t);
  Var total = tape.add(loss_nce, tape.scale(loss_ce, cfg.alpha));

  LossBreakdown breakdown;
  breakdown.infonce = loss_nce.value()(0, 0);
  breakdown.equipartition_ce = loss_ce.value()(0, 0);
  breakdown.alpha = cfg.alpha;
  breakdown.total = total.value()(0, 0);
  if (!std::isfinite(breakdown.total)) {
    throw NonFiniteError("train_step: non-finite loss (infonce=" +
                         std::to_string(breakdown.infonce) +
                         ", ce=" + std::to_string(breakdown.equipartition_ce) + ")");
  }

  tape.backward(total);
  for (std::size_t l = 0; l < state.params.weights.size(); ++l) {
    sgd_update(state.params.weights[l], state.opt.weight_velocity[l], tape.grad(q.weights[l]),
               lr, cfg.sgd_momentum, cfg.weight_decay);
    sgd_update(state.params.biases[l], state.opt.bias_velocity[l], tape.grad(q.biases[l]), lr,
               cfg.sgd_momentum, cfg.weight_decay);
  }
  ++state.opt.step;

  if (momentum_mode) {
    ema_update(state.key.value(), state.params);
    if (state.queue.has_value()) state.queue->push(rep_k);
  }
  return breakdown;
}

namespace {

nlohmann::json step_json(std::size_t step, std::size_t epoch, const LossBreakdown& loss) {
  nlohmann::json j{{"type", "step"},
                   {"step", step},
                   {"epoch", epoch},
                   {"infonce", loss.infonce},
                   {"equipartition_ce", loss.equipartition_ce},
                   {"alpha", loss.alpha},
                   {"total", loss.total}};
  if (loss.self_label.has_value()) j["self_label"] = *loss.self_label;
  return j;
}

nlohmann::json epoch_json(const EpochMetrics& m) {
  nlohmann::json j{{"type", "epoch"}, {"epoch", m.epoch}, {"entropy", m.entropy}};
  if (m.acc.has_value()) j["acc"] = *m.acc;
  if (m.nmi.has_value()) j["nmi"] = *m.nmi;
  if (m.ari.has_value()) j["ari"] = *m.ari;
  return j;
}

void emit(std::ostream* jsonl, const nlohmann::json& j) {
  if (jsonl != nullptr) *jsonl << j.dump() << '\n';
}

MlpSpec build_spec(const Dataset& train, const TrainConfig& cfg) {
  std::size_t k = cfg.cluster_dim;
  if (k == 0) {
    if (!train.has_labels()) {
      throw ConfigError("cluster_dim must be set explicitly for unlabeled data");
    }
    k = train.num_classes();
  }
  MlpSpec spec;
  spec.layer_widths.push_back(train.dim());
  for (std::size_t w : cfg.hidden_widths) spec.layer_widths.push_back(w);
  spec.layer_widths.push_back(k + cfg.instance_dim);
  spec.cluster_dim = k;
  spec.instance_dim = cfg.instance_dim;
  spec.validate();
  return spec;
}

}  // namespace

FitResult fit(const Dataset& train, const TrainConfig& cfg, const FitOptions& opts) {
  require_valid(cfg);
  if (train.size() == 0) throw ContractError("fit: empty dataset");
  if (cfg.batch_size > train.size() && cfg.epochs > 0) {
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) +
                      " exceeds dataset size " + std::to_string(train.size()));
  }

  const MlpSpec spec = build_spec(train, cfg);
  const bool momentum_mode = cfg.encoder_mode == TrainConfig::EncoderMode::kMomentumQueue;

  Rng rng(cfg.seed);
  std::optional<TrainState> state;
  Params best_params;
  double best_acc = -1.0;
  if (opts.resume != nullptr) {
    const Checkpoint& ckpt = *opts.resume;
    if (ckpt.spec != spec) {
      throw ShapeError("fit: checkpoint spec does not match dataset/config spec");
    }
    rng.set_state(ckpt.rng_state);
    state.emplace(spec, ckpt.params, rng);
    state->opt = ckpt.opt;
    state->epoch = ckpt.epoch;
    if (momentum_mode) {
      if (!ckpt.key_params.has_value()) {
        throw ContractError("fit: checkpoint lacks key encoder for momentum-queue mode");
      }
      state->key = MomentumEncoder{*ckpt.key_params, cfg.ema_momentum};
      state->queue.emplace(cfg.queue_capacity, spec.cluster_dim, spec.instance_dim);
      if (ckpt.queue_rows.rows() > 0) {
        Representation rep;
        rep.zc = Matrix(ckpt.queue_rows.rows(), spec.cluster_dim);
        rep.zn = Matrix(ckpt.queue_rows.rows(), spec.instance_dim);
        for (std::size_t i = 0; i < ckpt.queue_rows.rows(); ++i) {
          for (std::size_t j = 0; j < spec.cluster_dim; ++j) rep.zc(i, j) = ckpt.queue_rows(i, j);
          for (std::size_t j = 0; j < spec.instance_dim; ++j) {
            rep.zn(i, j) = ckpt.queue_rows(i, spec.cluster_dim + j);
          }
        }
        state->queue->push(rep);
      }
    }
    if (ckpt.best_params.has_value()) {
      best_params = *ckpt.best_params;
      best_acc = ckpt.best_acc;
    }
  } else {
    Params params = Params::init(spec, rng);
    state.emplace(spec, std::move(params), rng);
    if (momentum_mode) {
      state->key = MomentumEncoder{state->params, cfg.ema_momentum};
      state->queue.emplace(cfg.queue_capacity, spec.cluster_dim, spec.instance_dim);
    }
  }

  FitResult result;
  result.spec = spec;
  result.record.config_text = config_to_text(cfg);
  result.record.seed = cfg.seed;

  emit(opts.jsonl, nlohmann::json{{"type", "config"},
                                  {"version", kVersion},
                                  {"config", nlohmann::json::parse(config_to_json_string(cfg))}});

  const std::size_t steps_per_epoch = cfg.epochs == 0 ? 0 : train.size() / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  const Dataset& eval_ds = opts.val != nullptr && opts.val->size() > 0 ? *opts.val : train;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = state->epoch; epoch < cfg.epochs; ++epoch) {
    state->rng.shuffle(order);
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      Matrix batch(cfg.batch_size, train.dim());
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        const std::size_t src = order[s * cfg.batch_size + i];
        for (std::size_t j = 0; j < train.dim(); ++j) batch(i, j) = train.features(src, j);
      }
      const std::size_t global_step = epoch * steps_per_epoch + s;
      const double lr = learning_rate_at(cfg, global_step, total_steps);
      LossBreakdown loss;
      try {
        loss = train_step(*state, batch, cfg, lr);
      } catch (const NonFiniteError& err) {
        // Diagnostic dump of the offending batch, then abort the run.
        std::string dump_note;
        if (!opts.checkpoint_dir.empty()) {
          const auto dump_path = opts.checkpoint_dir / "diagnostic_batch.clcm";
          save_matrix(dump_path, batch);
          dump_note = "; batch dumped to " + dump_path.string();
        }
        throw NonFiniteError("epoch " + std::to_string(epoch) + " step " + std::to_string(s) +
                             ": " + err.what() + dump_note);
      }
      result.record.steps.push_back(loss);
      emit(opts.jsonl, step_json(global_step, epoch, loss));
    }
    state->epoch = epoch + 1;

    if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
      const ClusterMetrics m = evaluate(spec, state->params, eval_ds, cfg.t);
      EpochMetrics em;
      em.epoch = epoch;
      em.acc = m.acc;
      em.nmi = m.nmi;
      em.ari = m.ari;
      em.entropy = m.entropy;
      result.record.epochs.push_back(em);
      emit(opts.jsonl, epoch_json(em));
      if (log_enabled()) {
        std::cerr << "[clc] epoch " << epoch;
        if (m.acc.has_value()) std::cerr << " acc " << *m.acc;
        std::cerr << " entropy " << m.entropy << '\n';
      }
      if (m.acc.has_value() && *m.acc > best_acc) {
        best_acc = *m.acc;
        best_params = state->params;
      }
    }
  }

  result.params = state->params;
  result.best_params = best_acc >= 0.0 ? best_params : state->params;
  result.best_acc = best_acc;

  if (!opts.checkpoint_dir.empty()) {
    Checkpoint ckpt;
    ckpt.spec = spec;
    ckpt.params = state->params;
    ckpt.opt = state->opt;
    ckpt.epoch = state->epoch;
    ckpt.rng_state = state->rng.state();
    ckpt.config_text = config_to_text(cfg);
    if (momentum_mode) {
      ckpt.key_params = state->key->params;
      auto [qzc, qzn] = state->queue->negatives();
      Matrix rows(qzc.rows(), spec.cluster_dim + spec.instance_dim);
      for (std::size_t i = 0; i < qzc.rows(); ++i) {
        for (std::size_t j = 0; j < spec.cluster_dim; ++j) rows(i, j) = qzc(i, j);
        for (std::size_t j = 0; j < spec.instance_dim; ++j) {
          rows(i, spec.cluster_dim + j) = qzn(i, j);
        }
      }
      ckpt.queue_rows = std::move(rows);
    }
    if (best_acc >= 0.0) {
      ckpt.best_params = best_params;
      ckpt.best_acc = best_acc;
    }
    save_checkpoint(opts.checkpoint_dir / "final.clck", ckpt);
    if (best_acc >= 0.0) {
      save_params(opts.checkpoint_dir / "best.clck", spec, best_params);
    }
  }
  return result;
}

Params self_label_finetune(const MlpSpec& spec, Params params, const Dataset& ds,
                           const TrainConfig& cfg, std::ostream* jsonl, RunRecord* record) {
  require_valid(cfg);
  params.check_shapes(spec);
  if (ds.size() == 0) throw ContractError("self_label_finetune: empty dataset");
  const std::size_t batch = std::min(cfg.batch_size, ds.size());
  const std::size_t steps_per_epoch = ds.size() / batch;

  // Distinct stream from the pretraining phase.
  Rng rng(cfg.seed ^ 0x73656c666c6162ull);
  OptimizerState opt = OptimizerState::zeros_like(params);
  const AugmentationPolicy weak = AugmentationPolicy::weak(cfg.noise_sigma);
  const AugmentationPolicy strong = AugmentationPolicy::strong(cfg.noise_sigma);

  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.self_label_epochs; ++epoch) {
    rng.shuffle(order);
    std::size_t epoch_confident = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      Matrix x(batch, ds.dim());
      for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t src = order[s * batch + i];
        for (std::size_t j = 0; j < ds.dim(); ++j) x(i, j) = ds.features(src, j);
      }
      const Matrix view_weak = augment(x, weak, rng);
      const Matrix view_strong = augment(x, strong, rng);
      const Matrix probs_weak =
          cluster_probs(forward(spec, params, view_weak, cfg.normalize_parts).zc, cfg.t);

      Tape tape;
      ForwardVars f = forward_node(tape, spec, params, view_strong, cfg.normalize_parts);
      std::size_t confident = 0;
      Var loss = self_label_node(tape, f.zc, probs_weak, cfg.self_label_threshold, cfg.t,
                                 &confident);
      epoch_confident += confident;
      LossBreakdown breakdown;
      breakdown.self_label = loss.value()(0, 0);
      breakdown.total = loss.value()(0, 0);
      if (!std::isfinite(breakdown.total)) {
        throw NonFiniteError("self_label_finetune: non-finite loss at epoch " +
                             std::to_string(epoch));
      }
      if (record != nullptr) record->steps.push_back(breakdown);
      if (jsonl != nullptr) {
        emit(jsonl, nlohmann::json{{"type", "self_label_step"},
                                   {"epoch", epoch},
                                   {"step", s},
                                   {"confident", confident},
                                   {"loss", breakdown.total}});
      }
      if (confident == 0) continue;
      tape.backward(loss);
      // No weight decay here: a fully confident self-consistent model must
      // be an exact no-op.
      for (std::size_t l = 0; l < params.weights.size(); ++l) {
        sgd_update(params.weights[l], opt.weight_velocity[l], tape.grad(f.weights[l]),
                   cfg.learning_rate, cfg.sgd_momentum, 0.0);
        sgd_update(params.biases[l], opt.bias_velocity[l], tape.grad(f.biases[l]),
                   cfg.learning_rate, cfg.sgd_momentum, 0.0);
      }
    }
    if (epoch_confident == 0) {
      if (log_enabled()) {
        std::cerr << "[clc] self-label: no confident samples in epoch " << epoch
                  << ", stopping phase early\n";
      }
      break;
    }
  }
  return params;
}

namespace {

constexpr char kTrailerMagic[4] = {'C', 'L', 'C', 'T'};
constexpr std::uint32_t kTrailerVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw IoError("checkpoint read: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw IoError("checkpoint read: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

std::string get_string(std::istream& in) {
  const std::uint64_t n = get_u64(in);
  if (n > (1ull << 30)) throw IoError("checkpoint read: implausible string length");
  std::string s(static_cast<std::size_t>(n), '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw IoError("checkpoint read: truncated string");
  return s;
}

void put_param_block(std::ostream& out, const Params& p) {
  put_u64(out, p.weights.size());
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    write_matrix(out, p.weights[l]);
    write_matrix(out, p.biases[l]);
  }
}

Params get_param_block(std::istream& in) {
  const std::uint64_t n = get_u64(in);
  if (n > 1024) throw IoError("checkpoint read: implausible layer count");
  Params p;
  for (std::uint64_t l = 0; l < n; ++l) {
    p.weights.push_back(read_matrix(in));
    p.biases.push_back(read_matrix(in));
  }
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  // Leading block is the plain encoder format, so eval-only consumers can
  // read a training checkpoint with load_params().
  write_params(out, ckpt.spec, ckpt.params);
  out.write(kTrailerMagic, 4);
  put_u32(out, kTrailerVersion);
  put_u64(out, ckpt.opt.step);
  put_u64(out, ckpt.epoch);
  put_u64(out, ckpt.opt.weight_velocity.size());
  for (std::size_t l = 0; l < ckpt.opt.weight_velocity.size(); ++l) {
    write_matrix(out, ckpt.opt.weight_velocity[l]);
    write_matrix(out, ckpt.opt.bias_velocity[l]);
  }
  put_string(out, ckpt.rng_state);
  put_string(out, ckpt.config_text);
  out.put(ckpt.key_params.has_value() ? '\1' : '\0');
  if (ckpt.key_params.has_value()) put_param_block(out, *ckpt.key_params);
  write_matrix(out, ckpt.queue_rows);
  out.put(ckpt.best_params.has_value() ? '\1' : '\0');
  if (ckpt.best_params.has_value()) {
    put_param_block(out, *ckpt.best_params);
    put_u64(out, std::bit_cast<std::uint64_t>(ckpt.best_acc));
  }
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  Checkpoint ckpt;
  std::tie(ckpt.spec, ckpt.params) = read_params(in);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kTrailerMagic, 4) != 0) {
    throw IoError("checkpoint read: missing training trailer (params-only file?)");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kTrailerVersion) {
    throw IoError("checkpoint read: unsupported trailer version " + std::to_string(version));
  }
  ckpt.opt.step = static_cast<std::size_t>(get_u64(in));
  ckpt.epoch = static_cast<std::size_t>(get_u64(in));
  const std::uint64_t layers = get_u64(in);
  if (layers > 1024) throw IoError("checkpoint read: implausible layer count");
  for (std::uint64_t l = 0; l < layers; ++l) {
    ckpt.opt.weight_velocity.push_back(read_matrix(in));
    ckpt.opt.bias_velocity.push_back(read_matrix(in));
  }
  ckpt.rng_state = get_string(in);
  ckpt.config_text = get_string(in);
  char flag = 0;
  in.get(flag);
  if (!in) throw IoError("checkpoint read: truncated");
  if (flag == '\1') ckpt.key_params = get_param_block(in);
  ckpt.queue_rows = read_matrix(in);
  in.get(flag);
  if (!in) throw IoError("checkpoint read: truncated");
  if (flag == '\1') {
    ckpt.best_params = get_param_block(in);
    ckpt.best_acc = std::bit_cast<double>(get_u64(in));
  }
  return ckpt;
}

}  // namespace clc
