#include <doctest.h>

#include <filesystem>

#include "iterflow/io.hpp"
#include "support.hpp"

using namespace iterflow;
namespace fs = std::filesystem;

TEST_CASE("run length round trip") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint8_t> bits(1 + rng() % 500);
    for (auto& b : bits) b = (rng() % 7) < 2;
    auto runs = io::rle_encode(bits);
    CHECK(io::rle_decode(runs, bits.size()) == bits);
  }
  CHECK(io::rle_encode({1, 1, 0})[0] == 0);
  CHECK_THROWS(io::rle_decode({2, 5}, 4));
}

TEST_CASE("pair container round trip") {
  auto pair = synth::generate_pair(synth::random_scene(9));
  const auto bytes = io::encode_pair(pair);
  CHECK(bytes.substr(0, 6) == "IFPAIR");
  auto back = io::decode_pair(bytes);
  CHECK(io::encode_pair(back) == bytes);
  CHECK(back.source.size() == pair.source.size());
  CHECK(*back.source.gt_instance == *pair.source.gt_instance);
  CHECK(back.ego.translation == pair.ego.translation);
  CHECK(back.calib.intrinsics == pair.calib.intrinsics);
  CHECK(back.seed == pair.seed);
  for (std::size_t m = 0; m < pair.source_masks.masks.size(); ++m)
    CHECK(back.source_masks.masks[m].bitmap == pair.source_masks.masks[m].bitmap);
  CHECK((back.source.positions - pair.source.positions).cwiseAbs().maxCoeff() < 1e-5);

  CHECK_THROWS(io::decode_pair(bytes.substr(0, bytes.size() - 3)));
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS(io::decode_pair(bad));
  CHECK_THROWS(io::decode_pair(bytes + "junk"));
}

TEST_CASE("key value text") {
  auto kv = io::parse_key_values("# comment\n a = 1 \n\nname=x y # trailing\n");
  CHECK(kv.at("a") == "1");
  CHECK(kv.at("name") == "x y");
  CHECK_THROWS(io::parse_key_values("a = 1\na = 2\n", "f.txt"));
  CHECK_THROWS(io::parse_key_values("just words\n"));

  io::KeyReader r({{"x", "2.5"}, {"n", "3"}, {"b", "true"}, {"list", "1, 2,3"}, {"typo", "1"}}, "cfg");
  CHECK(r.real("x", 0) == 2.5);
  CHECK(r.integer("n", 0) == 3);
  CHECK(r.boolean("b", false));
  CHECK(r.reals("list", {}) == std::vector<double>{1, 2, 3});
  CHECK(r.real("missing", 7.0) == 7.0);
  try {
    r.finish();
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("typo") != std::string::npos);
  }
  io::KeyReader bad({{"x", "abc"}, {"u", "-1"}}, "cfg");
  CHECK_THROWS(bad.real("x", 0));
  CHECK_THROWS(bad.unsigned_integer("u", 0));
  CHECK(io::parse_key_values(io::format_key_values(kv)) == kv);
}

TEST_CASE("atomic writes") {
  const auto dir = fs::temp_directory_path() / "iterflow_io_test";
  fs::remove_all(dir);
  io::write_file_atomic(dir / "nested" / "a.bin", "hello");
  CHECK(io::read_file(dir / "nested" / "a.bin") == "hello");
  io::write_file_atomic(dir / "nested" / "a.bin", "bye");
  CHECK(io::read_file(dir / "nested" / "a.bin") == "bye");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "nested")) ++files;
  CHECK(files == 1);
  CHECK_THROWS_AS(io::read_file(dir / "missing"), io::IoError);
  fs::remove_all(dir);
}
