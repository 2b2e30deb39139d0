#pragma once

// On-disk formats: the frame-pair exchange container, key-value text configs,
// a small little-endian binary reader/writer, and atomic file writes.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "iterflow/synth.hpp"

namespace iterflow::io {

namespace fs = std::filesystem;

class IoError : public std::runtime_error {
 public:
  IoError(const fs::path& path, const std::string& what)
      : std::runtime_error(path.string() + ": " + what), path_(path) {}
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string read_file(const fs::path& path);
// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const fs::path& path, std::string_view bytes);

// Relative paths resolve under $ITERFLOW_OUTPUT_ROOT when it is set.
fs::path resolve_output(const fs::path& requested);

// "key = value" lines; '#' starts a comment. Duplicate keys are an error.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(std::string_view text, const std::string& origin = "<text>");
KeyValues read_key_values(const fs::path& path);
std::string format_key_values(const KeyValues& kv);

// Typed accessors; each removes the key it reads so leftovers can be reported.
class KeyReader {
 public:
  KeyReader(KeyValues kv, std::string origin) : kv_(std::move(kv)), origin_(std::move(origin)) {}
  std::string str(const std::string& key, const std::string& fallback);
  double real(const std::string& key, double fallback);
  std::int64_t integer(const std::string& key, std::int64_t fallback);
  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback);
  bool boolean(const std::string& key, bool fallback);
  std::vector<double> reals(const std::string& key, const std::vector<double>& fallback);
  // Throws std::invalid_argument naming every unread key.
  void finish() const;

 private:
  KeyValues kv_;
  std::string origin_;
};

class BinaryWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  template <typename T>
  void put_array(const T* data, std::size_t n) {
    buf_.append(reinterpret_cast<const char*>(data), n * sizeof(T));
  }
  void put_bytes(std::string_view s) { buf_.append(s); }
  void put_string(std::string_view s) {
    put<std::uint64_t>(s.size());
    buf_.append(s);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  BinaryReader(std::string_view bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  template <typename T>
  void get_array(T* out, std::size_t n) {
    if (n) std::memcpy(out, take(n * sizeof(T)), n * sizeof(T));
  }
  std::string_view get_bytes(std::size_t n) { return {take(n), n}; }
  std::string get_string();
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  const char* take(std::size_t n);
  std::string_view bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

// Alternating run lengths, starting with a (possibly empty) run of zeros.
std::vector<std::uint32_t> rle_encode(const std::vector<std::uint8_t>& bitmap);
std::vector<std::uint8_t> rle_decode(const std::vector<std::uint32_t>& runs, std::size_t size);

inline constexpr std::uint32_t kPairVersion = 1;

std::string encode_pair(const synth::FramePair& pair);
synth::FramePair decode_pair(std::string_view bytes, const std::string& origin = "<memory>");
void save_pair(const fs::path& path, const synth::FramePair& pair);
synth::FramePair load_pair(const fs::path& path);

}  // namespace iterflow::io
