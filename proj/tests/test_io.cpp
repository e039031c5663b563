#include "mto/checkpoint.hpp"
#include "mto/config.hpp"
#include "mto/dataset.hpp"
#include "mto/image_io.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace mto;
namespace fs = std::filesystem;

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("mto_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

TEST_F(IoTest, RawTensorRoundTrip) {
  std::mt19937_64 rng(1);
  std::vector<Image> images{mto::testing::random_image(8, 8, rng), mto::testing::random_image(8, 8, rng)};
  write_raw_tensor(images, path("x.bin"));
  const auto back = read_raw_tensor(path("x.bin"));
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < images[i].values.size(); ++k)
      EXPECT_EQ(back[i].values[k], static_cast<double>(static_cast<float>(images[i].values[k])));
}

TEST_F(IoTest, RawTensorByteScaleIsNormalised) {
  Image img(2, 2, 3);
  for (std::size_t k = 0; k < img.values.size(); ++k) img.values[k] = static_cast<double>(k * 20);
  write_raw_tensor({img}, path("b.bin"));
  const auto back = read_raw_tensor(path("b.bin"));
  EXPECT_DOUBLE_EQ(back[0].values[11], 220.0 / 255.0);
}

TEST_F(IoTest, RawTensorRejectsBadInput) {
  Image neg(2, 2, 3);
  neg.values[0] = -1;
  write_raw_tensor({neg}, path("neg.bin"));
  EXPECT_THROW(read_raw_tensor(path("neg.bin")), ArgumentError);

  Image gray(2, 2, 1);
  write_raw_tensor({gray}, path("gray.bin"));
  EXPECT_THROW(read_raw_tensor(path("gray.bin")), DimensionError);

  std::mt19937_64 rng(2);
  write_raw_tensor({mto::testing::random_image(4, 4, rng)}, path("t.bin"));
  fs::resize_file(path("t.bin"), fs::file_size(path("t.bin")) - 4);
  EXPECT_THROW(read_raw_tensor(path("t.bin")), IoError);
  EXPECT_THROW(read_raw_tensor(path("missing.bin")), IoError);
}

TEST_F(IoTest, ImageDirectoryResizeAndCrop) {
  std::mt19937_64 rng(3);
  Image wide(20, 40, 3);
  for (Index y = 0; y < 20; ++y)
    for (Index x = 0; x < 40; ++x) {
      wide.at(y, x, 0) = 1.0;  // red
      wide.at(y, x, 1) = 0.0;
      wide.at(y, x, 2) = x < 10 || x >= 30 ? 1.0 : 0.0;  // blue only at the sides cropped away
    }
  write_rgb_png(wide, path("a.png"));
  write_rgb_png(mto::testing::random_image(16, 16, rng), path("b.png"));
  std::ofstream(path("notes.txt")) << "ignored";
  const auto images = load_image_directory(dir_.string(), 10);
  ASSERT_EQ(images.size(), 2u);
  EXPECT_EQ(images[0].height, 10);
  EXPECT_EQ(images[0].width, 10);
  EXPECT_NEAR(images[0].at(5, 5, 0), 1.0, 1e-9);
  EXPECT_NEAR(images[0].at(5, 5, 2), 0.0, 1e-9);
  EXPECT_THROW(load_image_directory(path("nope"), 10), IoError);
}

TEST_F(IoTest, CheckpointRoundTrip) {
  for (Routing r : {Routing::encoder_masked, Routing::decoder_masked}) {
    const auto params = mto::testing::lively_parameters(mto::testing::small_config(r), 5);
    save_checkpoint(params, path("p.mtoc"));
    const auto back = load_checkpoint<double>(path("p.mtoc"));
    EXPECT_EQ(back.config, params.config);
    std::vector<Mat<double>> orig;
    params.visit([&](const std::string&, const Mat<double>& m) { orig.push_back(m.cast<float>().cast<double>()); });
    std::size_t k = 0;
    back.visit([&](const std::string& name, const Mat<double>& m) { EXPECT_EQ(m, orig[k++]) << name; });
    EXPECT_EQ(k, orig.size());
  }
}

TEST_F(IoTest, CheckpointRejectsCorruption) {
  {
    std::ofstream(path("junk.mtoc"), std::ios::binary) << "JUNKJUNKJUNK";
  }
  EXPECT_THROW(load_checkpoint<double>(path("junk.mtoc")), IoError);

  const auto params = init_parameters<double>(mto::testing::small_config(Routing::encoder_masked), 1);
  save_checkpoint(params, path("v.mtoc"));
  {
    std::fstream f(path("v.mtoc"), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const char v2[4] = {2, 0, 0, 0};
    f.write(v2, 4);
  }
  EXPECT_THROW(load_checkpoint<double>(path("v.mtoc")), IoError);

  save_checkpoint(params, path("t.mtoc"));
  fs::resize_file(path("t.mtoc"), fs::file_size(path("t.mtoc")) / 2);
  EXPECT_THROW(load_checkpoint<double>(path("t.mtoc")), IoError);
}

TEST_F(IoTest, ConfigDefaultsAndParsing) {
  std::ofstream(path("c.json")) << R"({"model": {"routing": "mae"}, "loss": {"lambda_e": 0.5, "rank_direction": "verbatim"}})";
  const auto cfg = load_config(path("c.json"));
  EXPECT_EQ(cfg.model.routing, Routing::decoder_masked);
  EXPECT_DOUBLE_EQ(cfg.masking.ratio, 0.75);
  EXPECT_DOUBLE_EQ(cfg.loss.weights.lambda_e, 0.5);
  EXPECT_DOUBLE_EQ(cfg.loss.weights.lambda_spa, 0.01);
  EXPECT_EQ(cfg.loss.rank_direction, RankDirection::verbatim);
  EXPECT_EQ(cfg.optimization.steps, 5000u);
  EXPECT_EQ(cfg.optimization.eval_every, 250u);

  const auto again = config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(again), to_json(cfg));
}

TEST_F(IoTest, ConfigErrors) {
  std::ofstream(path("unknown.json")) << R"({"model": {"layers": 3}})";
  EXPECT_THROW(load_config(path("unknown.json")), ConfigError);
  std::ofstream(path("nopath.json")) << R"({"dataset": {"format": "raw", "path": "does/not/exist.bin"}})";
  EXPECT_THROW(load_config(path("nopath.json")), ConfigError);
  std::ofstream(path("ratio.json")) << R"({"masking": {"ratio": 1.0}})";
  EXPECT_THROW(load_config(path("ratio.json")), ConfigError);
  std::ofstream(path("heads.json")) << R"({"model": {"width": 30, "heads": 4}})";
  EXPECT_THROW(load_config(path("heads.json")), ConfigError);
  std::ofstream(path("syntax.json")) << R"({"model": )";
  EXPECT_THROW(load_config(path("syntax.json")), ConfigError);
  EXPECT_THROW(load_config(path("missing.json")), ConfigError);
}

TEST_F(IoTest, ConfigRelativeDatasetPath) {
  std::mt19937_64 rng(4);
  write_raw_tensor({mto::testing::random_image(32, 32, rng)}, path("data.bin"));
  std::ofstream(path("rel.json")) << R"({"dataset": {"format": "raw", "path": "data.bin"}})";
  EXPECT_EQ(fs::path(load_config(path("rel.json")).dataset.path), dir_ / "data.bin");
}

TEST_F(IoTest, ConfigHashTracksContentButNotRunDir) {
  ExperimentConfig a;
  ExperimentConfig b = a;
  b.output.run_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.loss.weights.lambda_r = 0.02;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST_F(IoTest, RunRootFromEnvironment) {
  ::setenv("MTO_RUN_ROOT", dir_.c_str(), 1);
  EXPECT_EQ(default_run_root(), dir_);
  ::unsetenv("MTO_RUN_ROOT");
  EXPECT_EQ(default_run_root(), fs::path("runs"));
}

TEST(SyntheticCorpus, DeterministicAndInRange) {
  const auto a = synthetic_corpus(4, 32, 7);
  const auto b = synthetic_corpus(4, 32, 7);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a[i], b[i]);
    for (double v : a[i].values) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_NE(a[0], a[1]);
}

TEST(SplitDataset, SizesAndErrors) {
  auto images = synthetic_corpus(10, 16, 1);
  const auto ds = split_dataset(images, 3, 8, 0, "test");
  EXPECT_EQ(ds.train.size(), 7u);
  EXPECT_EQ(ds.holdout.size(), 3u);
  EXPECT_EQ(ds.train[0].n_patches(), 4);
  EXPECT_THROW(split_dataset(images, 10, 8, 0, "test"), ArgumentError);
}
