#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "relstm/checkpoint.hpp"

using namespace relstm;

namespace {

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  os << bytes;
}

ModelConfig small_config(std::uint64_t seed = 3) {
  ModelConfig cfg;
  cfg.segments = 2;
  cfg.input_h = cfg.input_w = 12;
  cfg.feat_h = cfg.feat_w = 3;
  cfg.feat_c = 4;
  cfg.classes = 3;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("save-load-save produces byte-identical files") {
  Model model(small_config());
  // Perturb the running stats and RNG so the round trip covers them too.
  model.bn_state().running_mean[1] = 0.123456789012345;
  model.bn_state().running_var[2] = 2.718281828459045;
  model.rng()();

  const std::string p1 = tmp_path("ckpt_a.rlsm");
  const std::string p2 = tmp_path("ckpt_b.rlsm");
  save_checkpoint(model, p1);
  Model loaded = load_checkpoint(p1);
  save_checkpoint(loaded, p2);
  CHECK(slurp(p1) == slurp(p2));

  // Every tensor comes back bitwise.
  for (const std::string& path : model.params().paths()) {
    const Tensor& a = model.params().value(path);
    const Tensor& b = loaded.params().value(path);
    REQUIRE(a.same_shape(b));
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
  for (std::int64_t i = 0; i < 4; ++i) {
    CHECK(model.bn_state().running_mean[i] == loaded.bn_state().running_mean[i]);
    CHECK(model.bn_state().running_var[i] == loaded.bn_state().running_var[i]);
  }
  // The RNG continues from the saved point.
  CHECK(model.rng()() == loaded.rng()());
}

TEST_CASE("corrupted magic bytes raise a format error") {
  Model model(small_config());
  const std::string p = tmp_path("ckpt_magic.rlsm");
  save_checkpoint(model, p);
  std::string bytes = slurp(p);
  bytes[0] = 'X';
  spit(p, bytes);
  CHECK_THROWS_AS(load_checkpoint(p), FormatError);
}

TEST_CASE("unsupported version raises a distinct format error") {
  Model model(small_config());
  const std::string p = tmp_path("ckpt_version.rlsm");
  save_checkpoint(model, p);
  std::string bytes = slurp(p);
  bytes[4] = 77;  // little-endian u32 version field
  spit(p, bytes);
  CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("version"), FormatError);
}

TEST_CASE("truncated files raise a format error") {
  Model model(small_config());
  const std::string p = tmp_path("ckpt_trunc.rlsm");
  save_checkpoint(model, p);
  std::string bytes = slurp(p);
  spit(p, bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(p), FormatError);
  spit(p, bytes.substr(0, 6));
  CHECK_THROWS_AS(load_checkpoint(p), FormatError);
}

TEST_CASE("parameter loading rejects mismatched architectures by path") {
  Model src(small_config());
  const std::string p = tmp_path("ckpt_mismatch.rlsm");
  save_checkpoint(src, p);

  ModelConfig wider = small_config();
  wider.feat_c = 6;
  Model dst(wider);
  CHECK_THROWS_WITH_AS(load_params_into(dst, p), doctest::Contains("bn.beta"), ShapeError);

  ModelConfig fewer = small_config();
  fewer.branches = Branches::kLocal;
  Model local(fewer);
  CHECK_THROWS_AS(load_params_into(local, p), FormatError);  // parameter count differs
}

TEST_CASE("parameter loading carries weights between same-shape models") {
  Model src(small_config(3));
  Model dst(small_config(99));  // different init
  const std::string p = tmp_path("ckpt_xfer.rlsm");
  save_checkpoint(src, p);
  load_params_into(dst, p);
  for (const std::string& path : src.params().paths()) {
    const Tensor& a = src.params().value(path);
    const Tensor& b = dst.params().value(path);
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
  // Config stays the target's own.
  CHECK(dst.config().seed == 99);
}

TEST_CASE("missing file raises a data error") {
  CHECK_THROWS_AS(load_checkpoint(tmp_path("no_such_checkpoint.rlsm")), DataError);
}
