#include "iterflow/training.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

namespace iterflow::training {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

}  // namespace

RunConfig RunConfig::from_key_values(const io::KeyValues& kv, const std::string& origin) {
  io::KeyReader r(kv, origin);
  RunConfig c;
  auto& m = c.model;
  m.feature_dim = r.unsigned_integer("feature_dim", m.feature_dim);
  m.hidden_dim = r.unsigned_integer("hidden_dim", m.hidden_dim);
  m.neighbors = r.unsigned_integer("neighbors", m.neighbors);
  m.radius = r.real("radius", m.radius);
  m.iterations = r.unsigned_integer("iterations", m.iterations);
  m.encoder_radii = r.reals("encoder_radii", m.encoder_radii);
  m.encoder_neighbors = r.unsigned_integer("encoder_neighbors", m.encoder_neighbors);
  m.point_mlp_dim = r.unsigned_integer("point_mlp_dim", m.point_mlp_dim);
  m.set_abstraction_dim = r.unsigned_integer("set_abstraction_dim", m.set_abstraction_dim);
  m.correlation_dim = r.unsigned_integer("correlation_dim", m.correlation_dim);
  m.motion_dim = r.unsigned_integer("motion_dim", m.motion_dim);
  m.flow_embed_dim = r.unsigned_integer("flow_embed_dim", m.flow_embed_dim);
  const std::string product = r.str("product", "elementwise");
  if (product == "elementwise")
    m.product = model::CorrelationProduct::kElementwise;
  else if (product == "inner")
    m.product = model::CorrelationProduct::kInner;
  else
    throw std::invalid_argument(origin + ": 'product' must be elementwise or inner, got '" + product + "'");
  m.intermediate_supervision = r.boolean("intermediate_supervision", m.intermediate_supervision);

  c.learning_rate = r.real("learning_rate", c.learning_rate);
  c.batch_size = r.unsigned_integer("batch_size", c.batch_size);
  c.epochs = r.unsigned_integer("epochs", c.epochs);
  c.checkpoint_every = r.unsigned_integer("checkpoint_every", c.checkpoint_every);
  c.num_points = r.unsigned_integer("num_points", c.num_points);
  c.data_dir = r.str("data_dir", c.data_dir);
  c.output_dir = r.str("output_dir", c.output_dir);
  c.seed = r.unsigned_integer("seed", c.seed);
  c.static_threshold = r.real("static_threshold", c.static_threshold);
  c.motion_threshold = r.real("motion_threshold", c.motion_threshold);
  c.resolution_ratio = r.real("resolution_ratio", c.resolution_ratio);
  const std::string unit = r.str("flow_unit", "displacement");
  if (unit == "displacement")
    c.flow_unit = labeling::FlowUnit::kDisplacement;
  else if (unit == "velocity")
    c.flow_unit = labeling::FlowUnit::kVelocity;
  else
    throw std::invalid_argument(origin + ": 'flow_unit' must be displacement or velocity, got '" + unit + "'");
  c.threads = r.unsigned_integer("threads", c.threads);
  c.resample_points = r.boolean("resample_points", c.resample_points);
  r.finish();
  m.seed = c.seed;
  c.validate();
  return c;
}

io::KeyValues RunConfig::to_key_values() const {
  const auto& m = model;
  return {
      {"feature_dim", std::to_string(m.feature_dim)},
      {"hidden_dim", std::to_string(m.hidden_dim)},
      {"neighbors", std::to_string(m.neighbors)},
      {"radius", fmt(m.radius)},
      {"iterations", std::to_string(m.iterations)},
      {"encoder_radii", join(m.encoder_radii)},
      {"encoder_neighbors", std::to_string(m.encoder_neighbors)},
      {"point_mlp_dim", std::to_string(m.point_mlp_dim)},
      {"set_abstraction_dim", std::to_string(m.set_abstraction_dim)},
      {"correlation_dim", std::to_string(m.correlation_dim)},
      {"motion_dim", std::to_string(m.motion_dim)},
      {"flow_embed_dim", std::to_string(m.flow_embed_dim)},
      {"product", m.product == model::CorrelationProduct::kInner ? "inner" : "elementwise"},
      {"intermediate_supervision", m.intermediate_supervision ? "true" : "false"},
      {"learning_rate", fmt(learning_rate)},
      {"batch_size", std::to_string(batch_size)},
      {"epochs", std::to_string(epochs)},
      {"checkpoint_every", std::to_string(checkpoint_every)},
      {"num_points", std::to_string(num_points)},
      {"data_dir", data_dir},
      {"output_dir", output_dir},
      {"seed", std::to_string(seed)},
      {"static_threshold", fmt(static_threshold)},
      {"motion_threshold", fmt(motion_threshold)},
      {"resolution_ratio", fmt(resolution_ratio)},
      {"flow_unit", flow_unit == labeling::FlowUnit::kVelocity ? "velocity" : "displacement"},
      {"threads", std::to_string(threads)},
      {"resample_points", resample_points ? "true" : "false"},
  };
}

void RunConfig::validate() const {
  model.validate();
  if (!(learning_rate > 0.0)) throw std::invalid_argument("config: learning_rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("config: batch_size must be >= 1");
  if (checkpoint_every == 0) throw std::invalid_argument("config: checkpoint_every must be >= 1");
  if (num_points == 0) throw std::invalid_argument("config: num_points must be >= 1");
  if (static_threshold < 0.0 || motion_threshold < 0.0) throw std::invalid_argument("config: thresholds must be >= 0");
  if (!(resolution_ratio > 0.0)) throw std::invalid_argument("config: resolution_ratio must be positive");
  if (threads == 0) throw std::invalid_argument("config: threads must be >= 1");
}

dataset::SampleOptions RunConfig::sample_options() const {
  dataset::SampleOptions o;
  o.num_points = num_points;
  o.static_threshold = static_threshold;
  o.seed = seed;
  return o;
}

metrics::EvalOptions RunConfig::eval_options() const {
  metrics::EvalOptions o;
  o.resolution_ratio = resolution_ratio;
  o.motion_threshold = motion_threshold;
  return o;
}

TrainState initial_state(const RunConfig& cfg) {
  auto model_cfg = cfg.model;
  model_cfg.seed = cfg.seed;
  TrainState s;
  s.params = model::init_params(model_cfg);
  ad::AdamOptions opt;
  opt.lr = cfg.learning_rate;
  s.adam = ad::AdamState::for_params(s.params, opt);
  s.rng.seed(cfg.seed ^ 0xD1B54A32D192ED03ULL);
  return s;
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'I', 'F', 'C', 'K', 'P', 'T', '\0', '\0'};

void put_vector(io::BinaryWriter& w, const std::vector<double>& v) {
  w.put<std::uint64_t>(v.size());
  w.put_array(v.data(), v.size());
}

std::vector<double> get_vector(io::BinaryReader& r) {
  const auto n = r.get<std::uint64_t>();
  if (n > (1ULL << 32)) r.fail("array length out of range");
  std::vector<double> v(static_cast<std::size_t>(n));
  r.get_array(v.data(), v.size());
  return v;
}

}  // namespace

std::string encode_checkpoint(const RunConfig& cfg, const TrainState& state) {
  io::BinaryWriter w;
  w.put_array(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  // Paths describe where a run lives, not what it computes; leaving them out
  // keeps checkpoints of identical runs byte-identical.
  RunConfig snapshot = cfg;
  snapshot.data_dir.clear();
  snapshot.output_dir.clear();
  w.put_string(io::format_key_values(snapshot.to_key_values()));
  w.put<std::uint64_t>(state.epoch);
  std::ostringstream rng;
  rng << state.rng;
  w.put_string(rng.str());

  w.put<std::uint32_t>(static_cast<std::uint32_t>(state.history.size()));
  for (const auto& h : state.history) {
    w.put<std::uint64_t>(h.epoch);
    for (double v : {h.loss.ic, h.loss.is, h.loss.stat, h.loss.total, h.val_epe}) w.put<double>(v);
  }

  const auto& names = state.params.names();
  const auto& tensors = state.params.tensors();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(names.size()));
  for (std::size_t i = 0; i < names.size(); ++i) {
    w.put_string(names[i]);
    const auto& shape = tensors[i].shape();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.put<std::uint64_t>(d);
    const auto data = tensors[i].data();
    w.put_array(data.data(), data.size());
  }

  const auto& a = state.adam;
  for (double v : {a.options.lr, a.options.beta1, a.options.beta2, a.options.epsilon}) w.put<double>(v);
  w.put<std::uint64_t>(a.step);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(a.first_moment.size()));
  for (std::size_t i = 0; i < a.first_moment.size(); ++i) {
    put_vector(w, a.first_moment[i]);
    put_vector(w, a.second_moment[i]);
  }
  return w.bytes();
}

std::pair<RunConfig, TrainState> decode_checkpoint(std::string_view bytes, const std::string& origin) {
  io::BinaryReader r(bytes, origin);
  if (r.get_bytes(sizeof(kCheckpointMagic)) != std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic)))
    r.fail("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  RunConfig cfg = RunConfig::from_key_values(io::parse_key_values(r.get_string(), origin + " (config)"), origin);
  TrainState s;
  s.epoch = static_cast<std::size_t>(r.get<std::uint64_t>());
  std::istringstream rng(r.get_string());
  rng >> s.rng;
  if (rng.fail()) r.fail("corrupt RNG state");

  const auto n_hist = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_hist; ++i) {
    EpochLog h;
    h.epoch = static_cast<std::size_t>(r.get<std::uint64_t>());
    h.loss.ic = r.get<double>();
    h.loss.is = r.get<double>();
    h.loss.stat = r.get<double>();
    h.loss.total = r.get<double>();
    h.val_epe = r.get<double>();
    s.history.push_back(h);
  }

  const auto n_params = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::string name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("tensor rank out of range");
    ad::Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    std::vector<double> values(ad::numel(shape));
    r.get_array(values.data(), values.size());
    s.params.add(name, shape, std::move(values));
  }
  ad::AdamOptions opt;
  opt.lr = r.get<double>();
  opt.beta1 = r.get<double>();
  opt.beta2 = r.get<double>();
  opt.epsilon = r.get<double>();
  s.adam.options = opt;
  s.adam.step = r.get<std::uint64_t>();
  const auto n_moments = r.get<std::uint32_t>();
  if (n_moments != n_params) r.fail("optimizer state does not match the parameter table");
  for (std::uint32_t i = 0; i < n_moments; ++i) {
    s.adam.first_moment.push_back(get_vector(r));
    s.adam.second_moment.push_back(get_vector(r));
    if (s.adam.first_moment.back().size() != s.params.tensors()[i].size() ||
        s.adam.second_moment.back().size() != s.params.tensors()[i].size())
      r.fail("optimizer moment size mismatch for " + s.params.names()[i]);
  }
  if (!r.done()) r.fail("trailing bytes");

  // The table must be exactly what this configuration instantiates.
  const auto expected = model::init_params(cfg.model);
  if (expected.names() != s.params.names()) r.fail("parameter names do not match the stored configuration");
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (expected.tensors()[i].shape() != s.params.tensors()[i].shape())
      r.fail("shape mismatch for " + expected.names()[i]);
  return {std::move(cfg), std::move(s)};
}

void save_checkpoint(const fs::path& path, const RunConfig& cfg, const TrainState& state) {
  io::write_file_atomic(path, encode_checkpoint(cfg, state));
}

std::pair<RunConfig, TrainState> load_checkpoint(const fs::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_epoch_%04zu.ifc", epoch);
  return buf;
}

std::string format_epoch_log(const std::vector<EpochLog>& history) {
  std::string out = "epoch,l_ic,l_is,l_stat,l_total,val_epe\n";
  char buf[256];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", h.epoch, h.loss.ic, h.loss.is, h.loss.stat,
                  h.loss.total, h.val_epe);
    out += buf;
  }
  return out;
}

// ---- training ----------------------------------------------------------------

namespace {

struct SampleGradient {
  losses::LossBreakdown loss;
  std::vector<std::vector<double>> grads;
};

SampleGradient sample_gradient(const ad::ParamStore& params, const model::IterFlowConfig& cfg,
                               const dataset::Sample& s) {
  ad::Tape tape;
  const auto leaves = params.fresh_leaves();
  const auto result = model::forward<double>(s.source, s.target, cfg, leaves);
  auto terms = losses::total_loss(result.final_flow(), s.source.positions, s.target.positions, s.assignment,
                                  s.static_set, s.ego);
  SampleGradient out;
  out.loss = terms.values();
  ad::Tensor objective = terms.total;
  if (cfg.intermediate_supervision && result.flows.size() > 1) {
    const std::size_t K = result.flows.size();
    for (std::size_t k = 0; k + 1 < K; ++k) {
      const auto t = losses::total_loss(result.flows[k], s.source.positions, s.target.positions, s.assignment,
                                        s.static_set, s.ego);
      objective = ad::add(objective, ad::scale(t.total, std::pow(kIntermediateDecay, double(K - 1 - k))));
    }
  }
  tape.backward(objective);
  out.grads = leaves.gradients();
  return out;
}

bool finite(const losses::LossBreakdown& l) {
  return std::isfinite(l.ic) && std::isfinite(l.is) && std::isfinite(l.stat) && std::isfinite(l.total);
}

}  // namespace

BatchResult batch_gradients(const ad::ParamStore& params, const model::IterFlowConfig& cfg,
                            const std::vector<const dataset::Sample*>& batch, std::size_t threads) {
  if (batch.empty()) throw std::invalid_argument("batch_gradients: empty batch");
  std::vector<SampleGradient> parts(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());
  auto work = [&](std::size_t i) {
    try {
      parts[i] = sample_gradient(params, cfg, *batch[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(threads, batch.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < batch.size(); i = next++) work(i);
      });
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  BatchResult out;
  std::vector<std::vector<std::vector<double>>> grads;
  grads.reserve(parts.size());
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& p : parts) {
    out.loss.ic += p.loss.ic * inv;
    out.loss.is += p.loss.is * inv;
    out.loss.stat += p.loss.stat * inv;
    out.loss.total += p.loss.total * inv;
    grads.push_back(std::move(p.grads));
  }
  out.gradients = ad::tree_reduce(std::move(grads));
  for (auto& g : out.gradients)
    for (auto& v : g) v *= inv;
  return out;
}

void train(const RunConfig& cfg, const dataset::Split& data, TrainState& state, const fs::path& out_dir,
           const TrainCallbacks& callbacks) {
  cfg.validate();
  if (data.train.empty()) throw std::invalid_argument("train: the training split is empty");
  const bool write = !out_dir.empty();
  auto model_cfg = cfg.model;
  model_cfg.seed = cfg.seed;

  fs::path last_good;
  if (write) {
    io::write_file_atomic(out_dir / "config.txt", io::format_key_values(cfg.to_key_values()));
    last_good = out_dir / checkpoint_name(state.epoch);
    if (state.epoch == 0) save_checkpoint(last_good, cfg, state);
  }

  const std::size_t start = state.epoch;
  for (std::size_t epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(state.rng() % i);
      std::swap(order[i - 1], order[j]);
    }

    std::vector<dataset::Sample> resampled;
    if (cfg.resample_points && data.train_pairs.size() == data.train.size()) {
      auto opts = cfg.sample_options();
      opts.seed = cfg.seed + epoch * 0x9E3779B97F4A7C15ULL;
      for (std::size_t i = 0; i < data.train.size(); ++i)
        resampled.push_back(dataset::prepare_sample(data.train_pairs[i], opts, data.train[i].name));
    }
    const auto& samples = resampled.empty() ? data.train : resampled;

    losses::LossBreakdown sum;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<const dataset::Sample*> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) batch.push_back(&samples[order[k]]);
      BatchResult r;
      try {
        r = batch_gradients(state.params, model_cfg, batch, cfg.threads);
        if (!finite(r.loss)) throw std::domain_error("non-finite loss");
        ad::adam_step(state.params, r.gradients, state.adam);
      } catch (const std::exception& e) {
        throw TrainingAborted("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(b / cfg.batch_size) + ": " + e.what() +
                              (write ? "; last good checkpoint: " + last_good.string() : std::string()));
      }
      const double w = static_cast<double>(batch.size());
      sum.ic += r.loss.ic * w;
      sum.is += r.loss.is * w;
      sum.stat += r.loss.stat * w;
      sum.total += r.loss.total * w;
    }
    const double n = static_cast<double>(order.size());
    EpochLog log;
    log.epoch = epoch;
    log.loss = {sum.ic / n, sum.is / n, sum.stat / n, sum.total / n};
    log.val_epe = data.validation.empty() ? std::numeric_limits<double>::quiet_NaN()
                                          : evaluate_samples(data.validation, cfg, &state.params).report.epe;
    state.epoch = epoch;
    state.history.push_back(log);
    if (callbacks.on_epoch) callbacks.on_epoch(log);

    if (write) {
      io::write_file_atomic(out_dir / "train_log.csv", format_epoch_log(state.history));
      if (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs) {
        last_good = out_dir / checkpoint_name(epoch);
        save_checkpoint(last_good, cfg, state);
      }
    }
  }
  if (write && state.epoch > start) save_checkpoint(out_dir / "final.ifc", cfg, state);
}

// ---- evaluation ----------------------------------------------------------------

EvalOutput evaluate_samples(const std::vector<dataset::Sample>& samples, const RunConfig& cfg,
                            const ad::ParamStore* params, Predictor predictor) {
  if (predictor == Predictor::kModel && params == nullptr)
    throw std::invalid_argument("evaluate_samples: model predictor needs parameters");
  metrics::Evaluator evaluator(cfg.eval_options());
  EvalOutput out;
  for (const auto& s : samples) {
    if (!s.source.gt_flow) throw std::invalid_argument("evaluate_samples: " + s.name + " has no ground-truth flow");
    if (!s.source.foreground_mask || !s.source.gt_category)
      throw std::invalid_argument("evaluate_samples: " + s.name + " has no foreground/category labels");
    geom::PointCloud pred;
    switch (predictor) {
      case Predictor::kModel: {
        const auto r = model::forward<double>(s.source, s.target, cfg.model, *params);
        pred = model::to_cloud(r.final_flow());
        break;
      }
      case Predictor::kGroundTruth: pred = *s.source.gt_flow; break;
      case Predictor::kZero: pred = geom::PointCloud::Zero(static_cast<Eigen::Index>(s.source.size()), 3); break;
    }
    geom::PointCloud gt = *s.source.gt_flow;
    if (cfg.flow_unit == labeling::FlowUnit::kVelocity) {
      pred /= s.dt;
      gt /= s.dt;
    }
    evaluator.add(pred, gt, s.source.positions, s.ego, *s.source.foreground_mask, *s.source.gt_category);
    SceneResult sr;
    sr.name = s.name;
    sr.positions = s.source.positions;
    sr.epe = metrics::epe(pred, gt);
    sr.prediction = std::move(pred);
    sr.ground_truth = std::move(gt);
    out.scenes.push_back(std::move(sr));
  }
  out.report = evaluator.report();
  return out;
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "K" || name == "k" || name == "iterations") return SweepAxis::kIterations;
  if (name == "L" || name == "l" || name == "neighbors") return SweepAxis::kNeighbors;
  if (name == "R" || name == "r" || name == "radius") return SweepAxis::kRadius;
  throw std::invalid_argument("unknown sweep axis '" + name + "' (expected K, L or R)");
}

const char* sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kIterations: return "K";
    case SweepAxis::kNeighbors: return "L";
    case SweepAxis::kRadius: return "R";
  }
  return "?";
}

model::IterFlowConfig with_axis(model::IterFlowConfig cfg, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::kIterations:
    case SweepAxis::kNeighbors: {
      if (!(value >= 1.0) || value != std::floor(value))
        throw std::invalid_argument(std::string("sweep: ") + sweep_axis_name(axis) + " needs integers >= 1");
      (axis == SweepAxis::kIterations ? cfg.iterations : cfg.neighbors) = static_cast<std::size_t>(value);
      break;
    }
    case SweepAxis::kRadius: cfg.radius = value; break;
  }
  cfg.validate();
  return cfg;
}

std::vector<SweepRow> sweep_eval(const std::vector<dataset::Sample>& samples, const RunConfig& cfg,
                                 const ad::ParamStore& params, SweepAxis axis, const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("sweep: empty value list");
  std::vector<SweepRow> rows;
  for (double v : values) {
    RunConfig c = cfg;
    c.model = with_axis(cfg.model, axis, v);
    rows.push_back({v, evaluate_samples(samples, c, &params).report});
  }
  return rows;
}

std::vector<SweepRow> sweep_train(const dataset::Split& data, const RunConfig& cfg, SweepAxis axis,
                                  const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("sweep: empty value list");
  if (data.validation.empty()) throw std::invalid_argument("sweep: the validation split is empty");
  std::vector<SweepRow> rows;
  for (double v : values) {
    RunConfig c = cfg;
    c.model = with_axis(cfg.model, axis, v);
    TrainState state = initial_state(c);
    train(c, data, state, {});
    rows.push_back({v, evaluate_samples(data.validation, c, &state.params).report});
  }
  return rows;
}

}  // namespace iterflow::training
