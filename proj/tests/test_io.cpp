#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "salaudit/config.hpp"
#include "salaudit/ops.hpp"
#include "salaudit/serialize.hpp"

using namespace salaudit;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const char* name) {
  const fs::path dir = fs::temp_directory_path() / "salaudit_test_io";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("weight files round-trip byte-exactly, preserving record order") {
  WeightStore ws;
  // deliberately non-alphabetical insertion order
  ws.put("zeta.weight", init_truncated_normal({3, 2}, 1, 0.5f));
  ws.put("alpha.bias", init_truncated_normal({4}, 2, 0.5f));
  ws.put("mid.weight", init_truncated_normal({2, 2, 3, 3}, 3, 0.5f));

  const fs::path p1 = tmp("w1.salw"), p2 = tmp("w2.salw");
  weights_write(p1, ws);
  const WeightStore back = weights_read(p1);
  CHECK(back.names() == ws.names());
  for (const auto& n : ws.names()) {
    CHECK(back.get(n).shape == ws.get(n).shape);
    CHECK(back.get(n).data == ws.get(n).data);
  }
  weights_write(p2, back);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("weight reader rejects malformed files") {
  const fs::path p = tmp("bad.salw");
  write_text_file(p, "SALX1\nnot really");
  CHECK_THROWS_AS(weights_read(p), ValidationError);
  write_text_file(p, "SALW1\n");
  CHECK(weights_read(p).size() == 0);  // empty store is fine
  // truncated record
  {
    std::ofstream f(p, std::ios::binary);
    f << "SALW1\n";
    const uint32_t len = 4;
    f.write(reinterpret_cast<const char*>(&len), 4);
    f << "ab";
  }
  CHECK_THROWS_AS(weights_read(p), ValidationError);
}

TEST_CASE("raw map files keep exact float values including signs") {
  Tensor map({5, 7});
  Rng rng(9);
  for (auto& v : map.data) v = static_cast<float>(rng.normal());
  const fs::path p = tmp("m.salf");
  salf_write(p, map);
  const Tensor back = salf_read(p);
  CHECK(back.shape == map.shape);
  CHECK(back.data == map.data);

  const std::string bytes = slurp(p);
  CHECK(bytes.size() == 16 + map.data.size() * 4);
  CHECK(bytes.substr(0, 5) == "SALF1");

  write_text_file(p, "JUNK");
  CHECK_THROWS_AS(salf_read(p), ValidationError);
}

TEST_CASE("pgm round trip and map rendering") {
  std::vector<uint8_t> px(12 * 10);
  for (size_t i = 0; i < px.size(); ++i) px[i] = static_cast<uint8_t>(i * 2);
  const fs::path p = tmp("img.pgm");
  pgm_write(p, 12, 10, px);
  const PgmImage img = pgm_read(p);
  CHECK(img.h == 12);
  CHECK(img.w == 10);
  CHECK(img.pixels == px);

  Tensor constant({4, 4});
  constant.fill(2.5f);
  const fs::path cp = tmp("const.pgm");
  map_pgm_write(cp, constant);
  const PgmImage cimg = pgm_read(cp);
  for (uint8_t v : cimg.pixels) CHECK(v == 128);  // constant maps render mid-gray

  Tensor ramp({1, 4});
  ramp.data = {-1.0f, 0.0f, 1.0f, 3.0f};
  const fs::path rp = tmp("ramp.pgm");
  map_pgm_write(rp, ramp);
  const PgmImage rimg = pgm_read(rp);
  CHECK(rimg.pixels[0] == 0);
  CHECK(rimg.pixels[3] == 255);
}

TEST_CASE("config serialization round-trips and hashes are stable") {
  ExperimentConfig cfg;
  cfg.data.n = 555;
  cfg.saliency.ig_steps = 12;
  cfg.workers = 3;
  const Json j = config_to_json(cfg);
  const ExperimentConfig back = config_from_json(j);
  CHECK(config_to_json(back) == j);
  CHECK(config_hash(back) == config_hash(cfg));

  ExperimentConfig other = cfg;
  other.data.seed += 1;
  CHECK(config_hash(other) != config_hash(cfg));
  CHECK(config_hash(cfg).size() == 16);
}

TEST_CASE("config validation names the offending field") {
  ExperimentConfig cfg;
  cfg.dataset_source = "import";
  cfg.import_path = "";
  try {
    validate_config(cfg);
    FAIL("expected rejection");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("dataset.import_path") != std::string::npos);
  }
  cfg = {};
  cfg.data.n = 10;
  CHECK_THROWS_AS(validate_config(cfg), ValidationError);
  cfg = {};
  cfg.ssim.window = 8;
  CHECK_THROWS_AS(validate_config(cfg), ValidationError);
  cfg = {};
  CHECK_NOTHROW(validate_config(cfg));
}

TEST_CASE("config parsing accepts partial files and rejects wrong types") {
  Json j;
  j["dataset"]["n"] = 777;
  const ExperimentConfig cfg = config_from_json(j);
  CHECK(cfg.data.n == 777);
  CHECK(cfg.saliency.ig_steps == 25);  // untouched defaults
  CHECK(cfg.classifier.patience == 4);

  Json badj;
  badj["dataset"]["n"] = "lots";
  CHECK_THROWS_AS(config_from_json(badj), ValidationError);
  Json badschema;
  badschema["schema"] = "other/9";
  CHECK_THROWS_AS(config_from_json(badschema), ValidationError);
}

TEST_CASE("default saliency settings match the documented values") {
  const SaliencyConfig cfg;
  CHECK(cfg.ig_steps == 25);
  CHECK(cfg.sg_samples == 25);
  CHECK(cfg.sg_noise_sigma == 0.15f);
  CHECK(cfg.xrai_segment_count == 60);
  const SsimConfig ssim_cfg;
  CHECK(ssim_cfg.window == 11);
  CHECK(ssim_cfg.sigma == 1.5);
  CHECK(ssim_cfg.k1 == 0.01);
  CHECK(ssim_cfg.k2 == 0.03);
}
