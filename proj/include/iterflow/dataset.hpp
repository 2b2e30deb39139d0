#pragma once

// Synthetic dataset generation to disk, manifest handling, and loading pairs
// into training samples with weak labels attached.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iterflow/geom.hpp"
#include "iterflow/io.hpp"
#include "iterflow/labeling.hpp"
#include "iterflow/synth.hpp"

namespace iterflow::dataset {

namespace fs = std::filesystem;

struct GenerateSpec {
  std::size_t num_scenes = 10;
  std::uint64_t seed = 0;  // scene i uses seed + i
  synth::RandomSceneOptions scene;

  static GenerateSpec from_key_values(const io::KeyValues& kv, const std::string& origin = "<spec>");
  io::KeyValues to_key_values() const;
  void validate() const;
};

// Scenes whose seed is divisible by this go to the validation split.
inline constexpr std::uint64_t kValidationModulus = 5;
inline bool is_validation_seed(std::uint64_t seed) { return seed % kValidationModulus == 0; }

struct ManifestEntry {
  std::string file;
  std::uint64_t seed = 0;
  std::size_t source_points = 0;
  std::size_t target_points = 0;
  std::size_t instances = 0;
  bool validation = false;
  std::size_t verify_issues = 0;
};

struct Manifest {
  GenerateSpec spec;
  std::vector<ManifestEntry> scenes;

  std::string to_json() const;
  static Manifest from_json(const std::string& text, const std::string& origin);
};

std::string pair_file_name(std::size_t index);

// Generates every pair in memory first, so a failing spec leaves no files.
Manifest generate_dataset(const GenerateSpec& spec, const fs::path& out_dir);
Manifest read_manifest(const fs::path& dir);

struct Sample {
  std::string name;
  std::uint64_t seed = 0;
  double dt = 0.1;
  geom::RadarFrame source;  // sampled to N points, ground truth kept for evaluation
  geom::RadarFrame target;
  geom::RigidTransform ego;
  labeling::InstanceAssignment assignment;
  std::vector<std::int32_t> static_set;
};

struct SampleOptions {
  std::size_t num_points = 256;
  double static_threshold = 0.1;  // m/s
  std::uint64_t seed = 0;
};

// Samples both frames to N points, labels points from the instance masks and
// selects the static set by ARV thresholding.
Sample prepare_sample(const synth::FramePair& pair, const SampleOptions& options, const std::string& name = {});

struct Split {
  std::vector<Sample> train;
  std::vector<Sample> validation;
  std::vector<synth::FramePair> train_pairs;  // full frames behind `train`, same order
};

Split load_dataset(const fs::path& dir, const SampleOptions& options);

}  // namespace iterflow::dataset
