// iterflow: generate synthetic data, train, evaluate, sweep and inspect.

#include <algorithm>
#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <json.hpp>

#include "iterflow/dataset.hpp"
#include "iterflow/io.hpp"
#include "iterflow/report.hpp"
#include "iterflow/training.hpp"

using namespace iterflow;
namespace fs = std::filesystem;

namespace {

io::KeyValues parse_overrides(const std::vector<std::string>& sets) {
  io::KeyValues kv;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return kv;
}

void merge(io::KeyValues& base, const io::KeyValues& over) {
  for (const auto& [k, v] : over) base[k] = v;
}

void require_dir(const fs::path& p, const char* what) {
  if (p.empty()) throw std::invalid_argument(std::string(what) + " not given");
  if (!fs::is_directory(p)) throw io::IoError(p, std::string(what) + " does not exist");
}

std::vector<dataset::Sample> pick_split(dataset::Split& split, const std::string& which) {
  if (which == "val") return std::move(split.validation);
  if (which == "train") return std::move(split.train);
  if (which == "all") {
    auto all = std::move(split.train);
    for (auto& s : split.validation) all.push_back(std::move(s));
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    return all;
  }
  throw std::invalid_argument("--split must be val, train or all");
}

training::Predictor parse_predictor(const std::string& s) {
  if (s == "model") return training::Predictor::kModel;
  if (s == "gt") return training::Predictor::kGroundTruth;
  if (s == "zero") return training::Predictor::kZero;
  throw std::invalid_argument("--predictor must be model, gt or zero");
}

void check_dataset_matches(const fs::path& data, const training::RunConfig& cfg) {
  const auto m = dataset::read_manifest(data);
  const auto ppf = m.spec.scene.points_per_frame;
  if (ppf > 0 && ppf != cfg.num_points)
    throw std::invalid_argument("dataset " + data.string() + " was generated with " + std::to_string(ppf) +
                                " points per frame, the model expects N = " + std::to_string(cfg.num_points));
}

int cmd_generate(const std::string& spec_path, const std::vector<std::string>& sets, const std::string& out) {
  io::KeyValues kv;
  if (!spec_path.empty()) kv = io::read_key_values(spec_path);
  merge(kv, parse_overrides(sets));
  const auto spec = dataset::GenerateSpec::from_key_values(kv, spec_path.empty() ? "<flags>" : spec_path);
  const fs::path dir = io::resolve_output(out);
  const auto manifest = dataset::generate_dataset(spec, dir);
  std::size_t val = 0, issues = 0;
  for (const auto& e : manifest.scenes) val += e.validation, issues += e.verify_issues;
  std::cout << "wrote " << manifest.scenes.size() << " pairs (" << manifest.scenes.size() - val << " train, " << val
            << " val) to " << dir.string() << "\n";
  if (issues) std::cout << "note: " << issues << " consistency-check deviations within noise (see manifest.json)\n";
  return 0;
}

struct TrainArgs {
  std::string config, data, out, resume;
  std::vector<std::string> sets;
  long epochs = -1;
};

int cmd_train(const TrainArgs& a) {
  training::RunConfig cfg;
  training::TrainState state;
  io::KeyValues overrides = parse_overrides(a.sets);
  if (!a.data.empty()) overrides["data_dir"] = a.data;
  if (!a.out.empty()) overrides["output_dir"] = a.out;
  if (a.epochs >= 0) overrides["epochs"] = std::to_string(a.epochs);

  if (!a.resume.empty()) {
    auto [ckpt_cfg, ckpt_state] = training::load_checkpoint(a.resume);
    io::KeyValues kv = ckpt_cfg.to_key_values();
    if (!a.config.empty()) {
      const auto file = io::read_key_values(a.config);
      for (const char* k : {"data_dir", "output_dir"})
        if (file.count(k)) kv[k] = file.at(k);
    }
    merge(kv, overrides);
    cfg = training::RunConfig::from_key_values(kv, "<resume>");
    if (cfg.model.iterations != ckpt_cfg.model.iterations || cfg.num_points != ckpt_cfg.num_points ||
        cfg.seed != ckpt_cfg.seed)
      throw std::invalid_argument("resume: model, N and seed must match the checkpoint");
    state = std::move(ckpt_state);
  } else {
    io::KeyValues kv;
    if (!a.config.empty()) kv = io::read_key_values(a.config);
    merge(kv, overrides);
    cfg = training::RunConfig::from_key_values(kv, a.config.empty() ? "<flags>" : a.config);
    state = training::initial_state(cfg);
  }
  require_dir(cfg.data_dir, "data_dir");
  check_dataset_matches(cfg.data_dir, cfg);
  const fs::path out_dir = io::resolve_output(cfg.output_dir);
  const auto split = dataset::load_dataset(cfg.data_dir, cfg.sample_options());
  std::cout << "training on " << split.train.size() << " scenes, validating on " << split.validation.size()
            << " (" << model::parameter_count(cfg.model) << " parameters)\n";

  training::TrainCallbacks cb;
  cb.on_epoch = [](const training::EpochLog& l) {
    std::printf("epoch %4zu  l_ic %.5f  l_is %.5f  l_stat %.5f  l_total %.5f  val_epe %.5f\n", l.epoch, l.loss.ic,
                l.loss.is, l.loss.stat, l.loss.total, l.val_epe);
    std::fflush(stdout);
  };
  training::train(cfg, split, state, out_dir, cb);

  if (!state.history.empty()) {
    std::vector<double> x;
    report::Series total{"l_total", {}}, val{"val EPE (m)", {}};
    for (const auto& h : state.history) {
      x.push_back(static_cast<double>(h.epoch));
      total.y.push_back(h.loss.total);
      val.y.push_back(h.val_epe);
    }
    io::write_file_atomic(out_dir / "train_curve.svg",
                          report::line_plot_svg("Training", "epoch", "value", x, {total, val}));
  }
  std::cout << "checkpoints in " << out_dir.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, out, split = "val", predictor = "model";
  long iterations = -1;
  long num_points = -1;
  std::size_t plots = 8;
};

int cmd_eval(const EvalArgs& a) {
  auto [cfg, state] = training::load_checkpoint(a.checkpoint);
  if (a.num_points >= 0 && static_cast<std::size_t>(a.num_points) != cfg.num_points)
    throw std::invalid_argument("--num-points " + std::to_string(a.num_points) + " differs from the checkpoint's N = " +
                                std::to_string(cfg.num_points));
  if (a.iterations >= 0) cfg.model = training::with_axis(cfg.model, training::SweepAxis::kIterations, double(a.iterations));
  require_dir(a.data, "--data");
  check_dataset_matches(a.data, cfg);
  auto split = dataset::load_dataset(a.data, cfg.sample_options());
  const auto samples = pick_split(split, a.split);
  if (samples.empty()) throw std::invalid_argument("split '" + a.split + "' is empty");
  const auto result = training::evaluate_samples(samples, cfg, &state.params, parse_predictor(a.predictor));

  const fs::path out = io::resolve_output(a.out);
  io::write_file_atomic(out / "metrics.csv", report::eval_csv(result.report));
  io::write_file_atomic(out / "report.json",
                        report::eval_json(result.report, {{"checkpoint", a.checkpoint},
                                                          {"data", a.data},
                                                          {"split", a.split + " (synthetic, scene seed % 5 == 0)"},
                                                          {"predictor", a.predictor},
                                                          {"iterations", std::to_string(cfg.model.iterations)}}));
  std::string per_scene = "scene,epe\n";
  for (const auto& s : result.scenes) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), ",%.9g\n", s.epe);
    per_scene += s.name + buf;
  }
  io::write_file_atomic(out / "per_scene.csv", per_scene);
  for (std::size_t i = 0; i < std::min(a.plots, result.scenes.size()); ++i) {
    const auto& s = result.scenes[i];
    const std::string stem = fs::path(s.name).stem().string();
    io::write_file_atomic(out / "plots" / (stem + ".svg"),
                          report::quiver_svg(stem + " (EPE " + std::to_string(s.epe) + ")", s.positions,
                                             s.prediction, s.ground_truth));
  }
  const auto& r = result.report;
  std::printf("EPE %.4f  AccS %.2f%%  AccR %.2f%%  RNE %.4f  MRNE %.4f  SRNE %.4f  3-way %.4f\n", r.epe,
              100 * r.acc_s, 100 * r.acc_r, r.rne, r.mrne, r.srne, r.three_way.mean);
  std::cout << "reports in " << out.string() << "\n";
  return 0;
}

struct SweepArgs {
  std::string axis, values, checkpoint, config, data, out, split = "val";
  std::vector<std::string> sets;
  bool train = false;
};

int cmd_sweep(const SweepArgs& a) {
  const auto axis = training::parse_sweep_axis(a.axis);
  std::vector<double> values = io::KeyReader({{"values", a.values}}, "--values").reals("values", {});
  if (values.empty()) throw std::invalid_argument("sweep: empty value list");
  require_dir(a.data, "--data");

  std::vector<training::SweepRow> rows;
  if (a.train) {
    io::KeyValues kv;
    if (!a.config.empty()) kv = io::read_key_values(a.config);
    merge(kv, parse_overrides(a.sets));
    const auto cfg = training::RunConfig::from_key_values(kv, a.config.empty() ? "<flags>" : a.config);
    check_dataset_matches(a.data, cfg);
    const auto split = dataset::load_dataset(a.data, cfg.sample_options());
    rows = training::sweep_train(split, cfg, axis, values);
  } else {
    if (a.checkpoint.empty()) throw std::invalid_argument("sweep: --checkpoint is required unless --train is given");
    const auto [cfg, state] = training::load_checkpoint(a.checkpoint);
    check_dataset_matches(a.data, cfg);
    auto split = dataset::load_dataset(a.data, cfg.sample_options());
    const auto samples = pick_split(split, a.split);
    if (samples.empty()) throw std::invalid_argument("split '" + a.split + "' is empty");
    rows = training::sweep_eval(samples, cfg, state.params, axis, values);
  }

  std::vector<report::SweepPoint> points;
  std::vector<double> x;
  report::Series epe{"EPE", {}}, three{"3-way EPE", {}};
  for (const auto& r : rows) {
    points.push_back({r.value, r.report});
    x.push_back(r.value);
    epe.y.push_back(r.report.epe);
    three.y.push_back(r.report.three_way.mean);
    std::printf("%s = %g  EPE %.4f  3-way %.4f\n", training::sweep_axis_name(axis), r.value, r.report.epe,
                r.report.three_way.mean);
  }
  const std::string name = training::sweep_axis_name(axis);
  const fs::path out = io::resolve_output(a.out);
  io::write_file_atomic(out / ("sweep_" + name + ".csv"), report::sweep_csv(name, points));
  io::write_file_atomic(out / ("sweep_" + name + ".svg"),
                        report::line_plot_svg("EPE vs " + name, name, "EPE (m)", x, {epe, three}));
  std::cout << "sweep written to " << out.string() << "\n";
  return 0;
}

int cmd_inspect(const std::string& path_str, bool as_json) {
  const fs::path path(path_str);
  nlohmann::ordered_json j;
  if (fs::is_directory(path)) {
    const auto m = dataset::read_manifest(path);
    std::size_t val = 0, src = 0, tgt = 0, inst = 0;
    for (const auto& e : m.scenes) val += e.validation, src += e.source_points, tgt += e.target_points, inst += e.instances;
    const double n = std::max<std::size_t>(m.scenes.size(), 1);
    j["kind"] = "dataset";
    j["scenes"] = m.scenes.size();
    j["train"] = m.scenes.size() - val;
    j["val"] = val;
    j["mean_source_points"] = src / n;
    j["mean_target_points"] = tgt / n;
    j["mean_instances"] = inst / n;
    for (const auto& [k, v] : m.spec.to_key_values()) j["spec"][k] = v;
  } else {
    const std::string bytes = io::read_file(path);
    if (bytes.rfind("IFPAIR", 0) == 0) {
      const auto pair = io::decode_pair(bytes, path.string());
      const auto diag = synth::verify_pair(pair);
      j["kind"] = "pair";
      j["seed"] = pair.seed;
      j["dt"] = pair.dt;
      j["source_points"] = pair.source.size();
      j["target_points"] = pair.target.size();
      j["source_masks"] = pair.source_masks.masks.size();
      j["target_masks"] = pair.target_masks.masks.size();
      j["ego_translation"] = {pair.ego.translation.x(), pair.ego.translation.y(), pair.ego.translation.z()};
      j["ego_velocity"] = {pair.ego_velocity.x(), pair.ego_velocity.y(), pair.ego_velocity.z()};
      j["position_noise"] = pair.position_noise;
      j["rrv_noise"] = pair.rrv_noise;
      j["verify"] = diag.summary();
    } else if (bytes.rfind("IFCKPT", 0) == 0) {
      const auto [cfg, state] = training::decode_checkpoint(bytes, path.string());
      j["kind"] = "checkpoint";
      j["epoch"] = state.epoch;
      j["adam_step"] = state.adam.step;
      j["parameters"] = state.params.total_parameters();
      j["tensors"] = state.params.size();
      if (!state.history.empty()) {
        j["last_l_total"] = state.history.back().loss.total;
        j["last_val_epe"] = state.history.back().val_epe;
      }
      for (const auto& [k, v] : cfg.to_key_values()) j["config"][k] = v;
    } else {
      j["kind"] = "key-value";
      for (const auto& [k, v] : io::parse_key_values(bytes, path.string())) j["entries"][k] = v;
    }
  }
  if (as_json) {
    std::cout << j.dump(2) << "\n";
  } else {
    for (const auto& [k, v] : j.items()) std::cout << k << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"iterflow: weakly supervised 4D radar scene flow"};
  app.require_subcommand(1);

  std::string gen_spec, gen_out;
  std::vector<std::string> gen_sets;
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset of frame pairs");
  gen->add_option("--spec", gen_spec, "key-value scene spec file");
  gen->add_option("--set", gen_sets, "override a spec key (key=value)");
  gen->add_option("--out", gen_out, "output directory")->required();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", ta.config, "key-value run config");
  tr->add_option("--data", ta.data, "dataset directory");
  tr->add_option("--out", ta.out, "output directory");
  tr->add_option("--epochs", ta.epochs, "total epochs");
  tr->add_option("--resume", ta.resume, "continue from a checkpoint");
  tr->add_option("--set", ta.sets, "override a config key (key=value)");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", ea.checkpoint)->required();
  ev->add_option("--data", ea.data)->required();
  ev->add_option("--out", ea.out, "report directory")->required();
  ev->add_option("--split", ea.split, "val, train or all");
  ev->add_option("--predictor", ea.predictor, "model, gt or zero");
  ev->add_option("--iterations", ea.iterations, "override K at inference");
  ev->add_option("--num-points", ea.num_points, "expected N; must match the checkpoint");
  ev->add_option("--plots", ea.plots, "number of per-scene quiver plots");

  SweepArgs sa;
  auto* sw = app.add_subcommand("sweep", "Sweep K, L or R");
  sw->add_option("--axis", sa.axis, "K, L or R")->required();
  sw->add_option("--values", sa.values, "comma-separated values")->required();
  sw->add_option("--data", sa.data)->required();
  sw->add_option("--out", sa.out)->required();
  sw->add_option("--checkpoint", sa.checkpoint, "evaluate one trained model per value");
  sw->add_flag("--train", sa.train, "train a fresh model per value");
  sw->add_option("--config", sa.config, "run config for --train");
  sw->add_option("--set", sa.sets, "override a config key (key=value)");
  sw->add_option("--split", sa.split, "val, train or all");

  std::string inspect_path;
  bool inspect_json = false;
  auto* in = app.add_subcommand("inspect", "Describe a pair file, dataset, checkpoint or config");
  in->add_option("path", inspect_path)->required();
  in->add_flag("--json", inspect_json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (*gen) return cmd_generate(gen_spec, gen_sets, gen_out);
    if (*tr) return cmd_train(ta);
    if (*ev) return cmd_eval(ea);
    if (*sw) return cmd_sweep(sa);
    if (*in) return cmd_inspect(inspect_path, inspect_json);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
