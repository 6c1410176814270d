#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mcstra/checkpoint.hpp"
#include "mcstra/model.hpp"

using namespace mcstra;

namespace {

namespace fs = std::filesystem;

McstraConfig tiny_config() {
  McstraConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  cfg.cascade_length = 2;
  cfg.branch_dim = 8;
  cfg.cascade_dim = 16;
  cfg.tail_dim = 8;
  cfg.heads = 2;
  cfg.patch = 2;
  cfg.window = 4;
  cfg.depths = {2};
  return cfg;
}

std::vector<CheckpointEntry> entries_of(McstraP<Tensor<float>>& params) {
  std::vector<CheckpointEntry> out;
  visit_params(params, "", [&](const std::string& n, Tensor<float>& t) {
    out.push_back({n, t.shape, t.data});
  });
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  McstraConfig cfg = tiny_config();
  auto plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 1);
  const std::string p1 = (fs::temp_directory_path() / "mcstra_ck1.mckp").string();
  const std::string p2 = (fs::temp_directory_path() / "mcstra_ck2.mckp").string();
  write_checkpoint(entries_of(params), p1);

  auto params2 = make_mcstra_params<float>(cfg, plans, 999);  // different init
  restore_tensors<float>(params2, "", read_checkpoint(p1));
  write_checkpoint(entries_of(params2), p2);
  EXPECT_EQ(read_file(p1), read_file(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST(Checkpoint, ForwardIdenticalAfterRoundTrip) {
  McstraConfig cfg = tiny_config();
  auto plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 2);
  SamplingMask mask = random_line_mask(cfg.width, 2.0, 0.2, 3);
  Rng rng(4);
  ComplexRaster img(cfg.height, cfg.width);
  for (cplx& v : img.data) v = cplx(rng.uniform(), 0.0);
  ComplexRaster y_hat = apply_mask(fft2c(img), mask);

  Tape<float> t1;
  auto f1 = mcstra_forward(t1, y_hat, mask, cfg, plans, params);

  const std::string path = (fs::temp_directory_path() / "mcstra_ck3.mckp").string();
  write_checkpoint(entries_of(params), path);
  auto params2 = make_mcstra_params<float>(cfg, plans, 5);
  restore_tensors<float>(params2, "", read_checkpoint(path));
  Tape<float> t2;
  auto f2 = mcstra_forward(t2, y_hat, mask, cfg, plans, params2);
  EXPECT_EQ(t1.value(f1.tail), t2.value(f2.tail));
  fs::remove(path);
}

TEST(Checkpoint, MismatchedShapeNamesTheParameter) {
  McstraConfig cfg = tiny_config();
  auto plans = make_plans<float>(cfg);
  auto params = make_mcstra_params<float>(cfg, plans, 6);
  const std::string path = (fs::temp_directory_path() / "mcstra_ck4.mckp").string();
  write_checkpoint(entries_of(params), path);

  McstraConfig bigger = cfg;
  bigger.branch_dim = 16;
  bigger.cascade_dim = 16;
  auto plans2 = make_plans<float>(bigger);
  auto params2 = make_mcstra_params<float>(bigger, plans2, 7);
  try {
    restore_tensors<float>(params2, "", read_checkpoint(path));
    FAIL() << "expected shape mismatch";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("branch_l"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("shape mismatch"), std::string::npos) << e.what();
  }
  fs::remove(path);
}

TEST(Checkpoint, CorruptFilesRejected) {
  const std::string path = (fs::temp_directory_path() / "mcstra_ck5.mckp").string();
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTMCKP1garbage";
  }
  EXPECT_THROW(read_checkpoint(path), std::runtime_error);
  {
    // valid magic, truncated body
    std::ofstream os(path, std::ios::binary);
    os.write("MCKP0001", 8);
    os.put(9);
  }
  EXPECT_THROW(read_checkpoint(path), std::runtime_error);
  fs::remove(path);
  EXPECT_THROW(read_checkpoint(path), std::runtime_error);
}

TEST(Checkpoint, OptimizerStateEntriesRoundTrip) {
  // optimizer accumulators ride along as opt/-prefixed entries
  std::vector<CheckpointEntry> entries;
  entries.push_back({"p0", {2, 2}, {1.f, 2.f, 3.f, 4.f}});
  entries.push_back({"opt/sq/p0", {2, 2}, {0.1f, 0.2f, 0.3f, 0.4f}});
  const std::string path = (fs::temp_directory_path() / "mcstra_ck6.mckp").string();
  write_checkpoint(entries, path);
  auto back = read_checkpoint(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].name, "opt/sq/p0");
  EXPECT_EQ(back[1].data, entries[1].data);
  EXPECT_EQ(back[0].shape, (Shape{2, 2}));
  fs::remove(path);
}
