#include "iterflow/io.hpp"

#include <bit>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <system_error>

namespace iterflow::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError(path, "read failed");
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError(path.parent_path(), "cannot create directory: " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp, "cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp, ec);
      throw IoError(path, "write failed");
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError(path, "rename failed");
  }
}

fs::path resolve_output(const fs::path& requested) {
  const char* root = std::getenv("ITERFLOW_OUTPUT_ROOT");
  if (root == nullptr || *root == '\0' || requested.is_absolute()) return requested;
  return fs::path(root) / requested;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

KeyValues parse_key_values(std::string_view text, const std::string& origin) {
  KeyValues kv;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw std::invalid_argument(where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(content).substr(0, eq));
    const std::string value = trim(std::string_view(content).substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(where + ": empty key");
    if (!kv.emplace(key, value).second) throw std::invalid_argument(where + ": duplicate key '" + key + "'");
  }
  return kv;
}

KeyValues read_key_values(const fs::path& path) { return parse_key_values(read_file(path), path.string()); }

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string KeyReader::str(const std::string& key, const std::string& fallback) {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::string v = it->second;
  kv_.erase(it);
  return v;
}

double KeyReader::real(const std::string& key, double fallback) {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("");
    kv_.erase(it);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(origin_ + ": '" + key + "' expects a number, got '" + it->second + "'");
  }
}

std::int64_t KeyReader::integer(const std::string& key, std::int64_t fallback) {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("");
    kv_.erase(it);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(origin_ + ": '" + key + "' expects an integer, got '" + it->second + "'");
  }
}

std::uint64_t KeyReader::unsigned_integer(const std::string& key, std::uint64_t fallback) {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    if (!it->second.empty() && it->second[0] == '-') throw std::invalid_argument("");
    std::size_t used = 0;
    const unsigned long long v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("");
    kv_.erase(it);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(origin_ + ": '" + key + "' expects a non-negative integer, got '" + it->second + "'");
  }
}

bool KeyReader::boolean(const std::string& key, bool fallback) {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string v = it->second;
  bool out;
  if (v == "1" || v == "true" || v == "yes" || v == "on")
    out = true;
  else if (v == "0" || v == "false" || v == "no" || v == "off")
    out = false;
  else
    throw std::invalid_argument(origin_ + ": '" + key + "' expects a boolean, got '" + v + "'");
  kv_.erase(it);
  return out;
}

std::vector<double> KeyReader::reals(const std::string& key, const std::vector<double>& fallback) {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::vector<double> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(t, &used));
      if (used != t.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw std::invalid_argument(origin_ + ": '" + key + "' expects comma-separated numbers, got '" + it->second + "'");
    }
  }
  kv_.erase(it);
  return out;
}

void KeyReader::finish() const {
  if (kv_.empty()) return;
  std::string keys;
  for (const auto& [k, v] : kv_) keys += (keys.empty() ? "" : ", ") + k;
  throw std::invalid_argument(origin_ + ": unknown key(s): " + keys);
}

std::string BinaryReader::get_string() {
  const auto n = get<std::uint64_t>();
  if (n > bytes_.size() - pos_) fail("string length out of range");
  return std::string(get_bytes(static_cast<std::size_t>(n)));
}

void BinaryReader::fail(const std::string& what) const {
  throw std::runtime_error(origin_ + ": " + what + " (offset " + std::to_string(pos_) + ")");
}

const char* BinaryReader::take(std::size_t n) {
  if (n > bytes_.size() - pos_) fail("unexpected end of data");
  const char* p = bytes_.data() + pos_;
  pos_ += n;
  return p;
}

std::vector<std::uint32_t> rle_encode(const std::vector<std::uint8_t>& bitmap) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t length = 0;
  for (const auto b : bitmap) {
    const std::uint8_t v = b != 0;
    if (v != current) {
      runs.push_back(length);
      current = v;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

std::vector<std::uint8_t> rle_decode(const std::vector<std::uint32_t>& runs, std::size_t size) {
  std::vector<std::uint8_t> out;
  out.reserve(size);
  std::uint8_t v = 0;
  for (const auto r : runs) {
    if (r > size - out.size()) throw std::runtime_error("rle_decode: runs exceed bitmap size");
    out.insert(out.end(), r, v);
    v ^= 1;
  }
  if (out.size() != size) throw std::runtime_error("rle_decode: runs cover " + std::to_string(out.size()) +
                                                   " pixels, expected " + std::to_string(size));
  return out;
}

namespace {

constexpr char kPairMagic[8] = {'I', 'F', 'P', 'A', 'I', 'R', '\0', '\0'};

enum PairFlags : std::uint32_t {
  kHasFlow = 1u << 0,
  kHasSourceLabels = 1u << 1,
  kHasTargetLabels = 1u << 2,
  kHasMasks = 1u << 3,
};

void put_transform(BinaryWriter& w, const geom::RigidTransform& t) {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) w.put<double>(t.rotation(r, c));
  for (int k = 0; k < 3; ++k) w.put<double>(t.translation[k]);
}

geom::RigidTransform get_transform(BinaryReader& r) {
  geom::RigidTransform t;
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) t.rotation(i, c) = r.get<double>();
  for (int k = 0; k < 3; ++k) t.translation[k] = r.get<double>();
  return t;
}

void put_cloud(BinaryWriter& w, const geom::PointCloud& cloud) {
  for (Eigen::Index i = 0; i < cloud.rows(); ++i)
    for (int k = 0; k < 3; ++k) w.put<float>(static_cast<float>(cloud(i, k)));
}

geom::PointCloud get_cloud(BinaryReader& r, std::size_t n) {
  geom::PointCloud cloud(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) cloud(static_cast<Eigen::Index>(i), k) = r.get<float>();
  return cloud;
}

void put_floats(BinaryWriter& w, const std::vector<double>& v) {
  for (double x : v) w.put<float>(static_cast<float>(x));
}

std::vector<double> get_floats(BinaryReader& r, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = r.get<float>();
  return v;
}

bool has_labels(const geom::RadarFrame& f) { return f.gt_instance && f.foreground_mask && f.gt_category; }

void put_labels(BinaryWriter& w, const geom::RadarFrame& f) {
  for (auto id : *f.gt_instance) w.put<std::int32_t>(id);
  for (auto m : *f.foreground_mask) w.put<std::int32_t>(m ? 1 : 0);
  for (auto c : *f.gt_category) w.put<std::int32_t>(static_cast<std::int32_t>(c));
}

void get_labels(BinaryReader& r, geom::RadarFrame& f) {
  const std::size_t n = f.size();
  std::vector<std::int32_t> ids(n), fg(n), cat(n);
  r.get_array(ids.data(), n);
  r.get_array(fg.data(), n);
  r.get_array(cat.data(), n);
  std::vector<std::uint8_t> mask(n);
  std::vector<geom::Category> cats(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (fg[i] != 0 && fg[i] != 1) r.fail("foreground flag must be 0 or 1");
    if (cat[i] < 0 || cat[i] > 3) r.fail("unknown category code " + std::to_string(cat[i]));
    mask[i] = static_cast<std::uint8_t>(fg[i]);
    cats[i] = static_cast<geom::Category>(cat[i]);
  }
  f.gt_instance = std::move(ids);
  f.foreground_mask = std::move(mask);
  f.gt_category = std::move(cats);
}

void put_masks(BinaryWriter& w, const labeling::InstanceMaskSet& set) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.masks.size()));
  for (const auto& m : set.masks) {
    w.put<std::int32_t>(m.track_id);
    const auto runs = rle_encode(m.bitmap);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(runs.size()));
    w.put_array(runs.data(), runs.size());
  }
}

labeling::InstanceMaskSet get_masks(BinaryReader& r, int width, int height) {
  labeling::InstanceMaskSet set;
  set.width = width;
  set.height = height;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    labeling::InstanceMask m;
    m.track_id = r.get<std::int32_t>();
    const auto n_runs = r.get<std::uint32_t>();
    std::vector<std::uint32_t> runs(n_runs);
    r.get_array(runs.data(), n_runs);
    try {
      m.bitmap = rle_decode(runs, static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
    } catch (const std::runtime_error& e) {
      r.fail(e.what());
    }
    set.masks.push_back(std::move(m));
  }
  return set;
}

}  // namespace

std::string encode_pair(const synth::FramePair& pair) {
  pair.source.validate();
  pair.target.validate();
  std::uint32_t flags = 0;
  if (pair.source.gt_flow) flags |= kHasFlow;
  if (has_labels(pair.source)) flags |= kHasSourceLabels;
  if (has_labels(pair.target)) flags |= kHasTargetLabels;
  if (pair.calib.width > 0) flags |= kHasMasks;

  BinaryWriter w;
  w.put_array(kPairMagic, sizeof(kPairMagic));
  w.put<std::uint32_t>(kPairVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(pair.source.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(pair.target.size()));
  w.put<std::uint32_t>(flags);

  w.put<std::uint64_t>(pair.seed);
  w.put<double>(pair.dt);
  w.put<double>(pair.position_noise);
  w.put<double>(pair.rrv_noise);
  put_transform(w, pair.ego);
  for (int k = 0; k < 3; ++k) w.put<double>(pair.ego_velocity[k]);
  w.put<std::int32_t>(pair.calib.width);
  w.put<std::int32_t>(pair.calib.height);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) w.put<double>(pair.calib.intrinsics(r, c));
  put_transform(w, pair.calib.radar_to_camera);

  for (const auto* f : {&pair.source, &pair.target}) {
    put_cloud(w, f->positions);
    put_floats(w, f->rcs);
    put_floats(w, f->rrv);
  }
  if (flags & kHasFlow) put_cloud(w, *pair.source.gt_flow);
  if (flags & kHasSourceLabels) put_labels(w, pair.source);
  if (flags & kHasTargetLabels) put_labels(w, pair.target);
  if (flags & kHasMasks) {
    put_masks(w, pair.source_masks);
    put_masks(w, pair.target_masks);
  }
  return w.bytes();
}

synth::FramePair decode_pair(std::string_view bytes, const std::string& origin) {
  BinaryReader r(bytes, origin);
  if (r.get_bytes(sizeof(kPairMagic)) != std::string_view(kPairMagic, sizeof(kPairMagic)))
    r.fail("not a frame-pair file (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kPairVersion) r.fail("unsupported frame-pair version " + std::to_string(version));
  const auto n1 = r.get<std::uint32_t>();
  const auto n2 = r.get<std::uint32_t>();
  const auto flags = r.get<std::uint32_t>();
  if (flags & ~std::uint32_t{0xF}) r.fail("unknown flag bits");

  synth::FramePair pair;
  pair.seed = r.get<std::uint64_t>();
  pair.dt = r.get<double>();
  pair.position_noise = r.get<double>();
  pair.rrv_noise = r.get<double>();
  pair.ego = get_transform(r);
  for (int k = 0; k < 3; ++k) pair.ego_velocity[k] = r.get<double>();
  pair.calib.width = r.get<std::int32_t>();
  pair.calib.height = r.get<std::int32_t>();
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) pair.calib.intrinsics(i, c) = r.get<double>();
  pair.calib.radar_to_camera = get_transform(r);

  for (auto [f, n] : {std::pair{&pair.source, n1}, std::pair{&pair.target, n2}}) {
    f->positions = get_cloud(r, n);
    f->rcs = get_floats(r, n);
    f->rrv = get_floats(r, n);
  }
  if (flags & kHasFlow) pair.source.gt_flow = get_cloud(r, n1);
  if (flags & kHasSourceLabels) get_labels(r, pair.source);
  if (flags & kHasTargetLabels) get_labels(r, pair.target);
  if (flags & kHasMasks) {
    pair.source_masks = get_masks(r, pair.calib.width, pair.calib.height);
    pair.target_masks = get_masks(r, pair.calib.width, pair.calib.height);
  }
  if (!r.done()) r.fail("trailing bytes");
  try {
    pair.source.validate();
    pair.target.validate();
    if (flags & kHasMasks) {
      pair.source_masks.validate();
      pair.target_masks.validate();
    }
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(origin + ": " + e.what());
  }
  return pair;
}

void save_pair(const fs::path& path, const synth::FramePair& pair) { write_file_atomic(path, encode_pair(pair)); }

synth::FramePair load_pair(const fs::path& path) { return decode_pair(read_file(path), path.string()); }

}  // namespace iterflow::io
