#include "iterflow/dataset.hpp"

#include <json.hpp>
#include <stdexcept>

namespace iterflow::dataset {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

GenerateSpec GenerateSpec::from_key_values(const io::KeyValues& kv, const std::string& origin) {
  io::KeyReader r(kv, origin);
  GenerateSpec s;
  auto& o = s.scene;
  s.num_scenes = r.unsigned_integer("num_scenes", s.num_scenes);
  s.seed = r.unsigned_integer("seed", s.seed);
  o.min_instances = r.unsigned_integer("min_instances", o.min_instances);
  o.max_instances = r.unsigned_integer("max_instances", o.max_instances);
  o.moving_probability = r.real("moving_probability", o.moving_probability);
  o.max_ego_speed = r.real("max_ego_speed", o.max_ego_speed);
  o.max_ego_yaw_rate = r.real("max_ego_yaw_rate", o.max_ego_yaw_rate);
  o.position_noise = r.real("position_noise", o.position_noise);
  o.rrv_noise = r.real("rrv_noise", o.rrv_noise);
  o.background_points = r.unsigned_integer("background_points", o.background_points);
  o.clutter_points = r.unsigned_integer("clutter_points", o.clutter_points);
  o.detection_probability = r.real("detection_probability", o.detection_probability);
  o.points_per_frame = r.unsigned_integer("points_per_frame", o.points_per_frame);
  o.dt = r.real("dt", o.dt);
  o.mask_dilation = static_cast<int>(r.integer("mask_dilation", o.mask_dilation));
  r.finish();
  s.validate();
  return s;
}

io::KeyValues GenerateSpec::to_key_values() const {
  const auto& o = scene;
  return {
      {"num_scenes", std::to_string(num_scenes)},
      {"seed", std::to_string(seed)},
      {"min_instances", std::to_string(o.min_instances)},
      {"max_instances", std::to_string(o.max_instances)},
      {"moving_probability", fmt(o.moving_probability)},
      {"max_ego_speed", fmt(o.max_ego_speed)},
      {"max_ego_yaw_rate", fmt(o.max_ego_yaw_rate)},
      {"position_noise", fmt(o.position_noise)},
      {"rrv_noise", fmt(o.rrv_noise)},
      {"background_points", std::to_string(o.background_points)},
      {"clutter_points", std::to_string(o.clutter_points)},
      {"detection_probability", fmt(o.detection_probability)},
      {"points_per_frame", std::to_string(o.points_per_frame)},
      {"dt", fmt(o.dt)},
      {"mask_dilation", std::to_string(o.mask_dilation)},
  };
}

void GenerateSpec::validate() const {
  const auto& o = scene;
  if (num_scenes == 0) throw std::invalid_argument("generate spec: num_scenes must be >= 1");
  if (o.min_instances > o.max_instances) throw std::invalid_argument("generate spec: min_instances > max_instances");
  if (!(o.dt > 0.0)) throw std::invalid_argument("generate spec: dt must be positive");
  if (o.moving_probability < 0.0 || o.moving_probability > 1.0)
    throw std::invalid_argument("generate spec: moving_probability must lie in [0, 1]");
  if (!(o.detection_probability > 0.0) || o.detection_probability > 1.0)
    throw std::invalid_argument("generate spec: detection_probability must lie in (0, 1]");
  if (o.position_noise < 0.0 || o.rrv_noise < 0.0 || o.max_ego_speed < 0.0 || o.max_ego_yaw_rate < 0.0)
    throw std::invalid_argument("generate spec: noise levels and ego limits must be >= 0");
  if (o.background_points + o.clutter_points == 0 && o.max_instances == 0)
    throw std::invalid_argument("generate spec: scenes would contain no points");
}

std::string Manifest::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "iterflow-pairs";
  j["version"] = io::kPairVersion;
  nlohmann::ordered_json spec_json;
  for (const auto& [k, v] : spec.to_key_values()) spec_json[k] = v;
  j["spec"] = spec_json;
  std::size_t val = 0;
  auto scenes_json = nlohmann::ordered_json::array();
  for (const auto& e : scenes) {
    val += e.validation;
    scenes_json.push_back({{"file", e.file},
                           {"seed", e.seed},
                           {"split", e.validation ? "val" : "train"},
                           {"source_points", e.source_points},
                           {"target_points", e.target_points},
                           {"instances", e.instances},
                           {"verify_issues", e.verify_issues}});
  }
  j["counts"] = {{"scenes", scenes.size()}, {"train", scenes.size() - val}, {"val", val}};
  j["scenes"] = scenes_json;
  return j.dump(2) + "\n";
}

Manifest Manifest::from_json(const std::string& text, const std::string& origin) {
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "iterflow-pairs") throw std::runtime_error("not an iterflow dataset manifest");
    io::KeyValues kv;
    for (const auto& [k, v] : j.at("spec").items()) kv[k] = v.get<std::string>();
    m.spec = GenerateSpec::from_key_values(kv, origin);
    for (const auto& s : j.at("scenes")) {
      ManifestEntry e;
      e.file = s.at("file").get<std::string>();
      e.seed = s.at("seed").get<std::uint64_t>();
      e.validation = s.at("split").get<std::string>() == "val";
      e.source_points = s.at("source_points").get<std::size_t>();
      e.target_points = s.at("target_points").get<std::size_t>();
      e.instances = s.at("instances").get<std::size_t>();
      e.verify_issues = s.value("verify_issues", std::size_t{0});
      m.scenes.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(origin + ": malformed manifest: " + e.what());
  }
  return m;
}

std::string pair_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pair_%05zu.ifp", index);
  return buf;
}

Manifest generate_dataset(const GenerateSpec& spec, const fs::path& out_dir) {
  spec.validate();
  Manifest manifest;
  manifest.spec = spec;
  std::vector<std::string> blobs;
  for (std::size_t i = 0; i < spec.num_scenes; ++i) {
    const std::uint64_t seed = spec.seed + i;
    const auto scene = synth::random_scene(seed, spec.scene);
    const auto pair = synth::generate_pair(scene);
    ManifestEntry e;
    e.file = pair_file_name(i);
    e.seed = seed;
    e.source_points = pair.source.size();
    e.target_points = pair.target.size();
    e.instances = scene.instances.size();
    e.validation = is_validation_seed(seed);
    e.verify_issues = synth::verify_pair(pair).issues.size();
    manifest.scenes.push_back(e);
    blobs.push_back(io::encode_pair(pair));
  }
  for (std::size_t i = 0; i < blobs.size(); ++i) io::write_file_atomic(out_dir / manifest.scenes[i].file, blobs[i]);
  io::write_file_atomic(out_dir / "manifest.json", manifest.to_json());
  return manifest;
}

Manifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  return Manifest::from_json(io::read_file(path), path.string());
}

Sample prepare_sample(const synth::FramePair& pair, const SampleOptions& options, const std::string& name) {
  Sample s;
  s.name = name;
  s.seed = pair.seed;
  s.dt = pair.dt;
  s.ego = pair.ego;
  const std::uint64_t base = splitmix(options.seed ^ splitmix(pair.seed));
  s.source = geom::sample_points(pair.source, options.num_points, splitmix(base + 1));
  s.target = geom::sample_points(pair.target, options.num_points, splitmix(base + 2));

  std::vector<std::int32_t> src_labels(s.source.size(), 0), tgt_labels(s.target.size(), 0);
  if (pair.calib.width > 0) {
    src_labels = labeling::assign_instance_labels(s.source, pair.source_masks, pair.calib);
    tgt_labels = labeling::assign_instance_labels(s.target, pair.target_masks, pair.calib);
  }
  s.assignment = labeling::build_instance_sets(src_labels, tgt_labels);
  s.static_set = labeling::extract_static_set(labeling::compensate_rrv(s.source, pair.ego_velocity),
                                              options.static_threshold);
  return s;
}

Split load_dataset(const fs::path& dir, const SampleOptions& options) {
  const Manifest m = read_manifest(dir);
  Split split;
  for (const auto& e : m.scenes) {
    const auto pair = io::load_pair(dir / e.file);
    auto sample = prepare_sample(pair, options, e.file);
    (e.validation ? split.validation : split.train).push_back(std::move(sample));
    if (!e.validation) split.train_pairs.push_back(pair);
  }
  return split;
}

}  // namespace iterflow::dataset
