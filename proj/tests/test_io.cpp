#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "statdiff/io.hpp"
#include "support/sampling.hpp"

namespace statdiff {
namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("statdiff_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

using SamplesCsv = TempDir;
using Checkpoint = TempDir;
using Bundle = TempDir;

TEST_F(SamplesCsv, RoundTripIsExact) {
  std::mt19937_64 rng(1);
  Samples D = testing::standard_normal(rng, 40, 3);
  D(0, 0) = 1e-310;
  D(1, 1) = -0.0;
  D(2, 2) = 123456789.123456789;
  D(3, 0) = std::nextafter(1.0, 2.0);
  write_samples_csv(dir_ / "x.csv", D);
  const Samples back = read_samples_csv(dir_ / "x.csv");
  ASSERT_EQ(back.rows(), 40);
  ASSERT_EQ(back.cols(), 3);
  for (Eigen::Index r = 0; r < 40; ++r)
    for (Eigen::Index c = 0; c < 3; ++c) EXPECT_EQ(back(r, c), D(r, c));
  EXPECT_TRUE(std::signbit(back(1, 1)));
  EXPECT_EQ(io::read_text(dir_ / "x.csv").substr(0, 9), "x1,x2,x3\n");
}

TEST_F(SamplesCsv, MalformedInputRaisesIoError) {
  io::write_text(dir_ / "ragged.csv", "x1,x2\n1,2\n3\n");
  EXPECT_THROW(read_samples_csv(dir_ / "ragged.csv"), IoError);
  io::write_text(dir_ / "text.csv", "x1\nabc\n");
  EXPECT_THROW(read_samples_csv(dir_ / "text.csv"), IoError);
  EXPECT_THROW(read_samples_csv(dir_ / "missing.csv"), IoError);
}

TEST_F(Checkpoint, ModelRoundTripKeepsParamsAndFrozenEntries) {
  std::mt19937_64 rng(2);
  for (SdeModel m : {SdeModel::linear(3), SdeModel::linear(2, false), SdeModel::mlp(3, 4)}) {
    m.set_params(testing::normal_vector(rng, m.num_params(), 1.0));
    m.freeze(1);
    const SdeModel back = model_from_json(Json::parse(model_to_json(m).dump()));
    EXPECT_EQ(back.params(), m.params());
    EXPECT_EQ(back.trainable_mask(), m.trainable_mask());
    EXPECT_EQ(back.shape().kind, m.shape().kind);
    EXPECT_EQ(back.shape().fixed_self_regulation, m.shape().fixed_self_regulation);
  }
}

TEST_F(Checkpoint, StateRoundTrip) {
  std::mt19937_64 rng(3);
  const std::vector<Environment> envs{
      {testing::standard_normal(rng, 50, 3), {}},
      {testing::standard_normal(rng, 50, 3), {2}}};
  TrainConfig cfg;
  cfg.steps = 20;
  cfg.batch_size = 16;
  const TrainState s = train(envs, cfg).state;
  save_checkpoint(dir_ / "ckpt.json", s);
  const TrainState back = load_checkpoint(dir_ / "ckpt.json");
  EXPECT_EQ(back.model.params(), s.model.params());
  EXPECT_EQ(back.step, 20);
  ASSERT_EQ(back.phis.size(), 2u);
  EXPECT_EQ(back.phis[1].targets, s.phis[1].targets);
  EXPECT_EQ(back.phis[1].delta, s.phis[1].delta);
  EXPECT_EQ(back.theta_opt.v, s.theta_opt.v);
  EXPECT_EQ(back.phi_opt[1].steps, s.phi_opt[1].steps);
  save_checkpoint(dir_ / "again.json", back);
  EXPECT_EQ(io::read_text(dir_ / "ckpt.json"), io::read_text(dir_ / "again.json"));
}

TEST_F(Checkpoint, BadFilesRaiseIoError) {
  io::write_text(dir_ / "junk.json", "{not json");
  EXPECT_THROW(load_checkpoint(dir_ / "junk.json"), IoError);
  io::write_text(dir_ / "short.json", R"({"kind":"linear","dim":2,"hidden":0,"params":[1,2]})");
  EXPECT_THROW(load_checkpoint(dir_ / "short.json"), IoError);
  io::write_text(dir_ / "kind.json", R"({"kind":"quadratic","dim":1,"hidden":0,"params":[]})");
  EXPECT_THROW(load_checkpoint(dir_ / "kind.json"), IoError);
  EXPECT_THROW(load_checkpoint(dir_ / "none.json"), IoError);
}

BenchmarkTask small_task() {
  TaskConfig tc;
  tc.dim = 4;
  tc.expected_degree = 2.0;
  tc.n_train_interventions = 2;
  tc.n_test_interventions = 1;
  tc.n_per_dataset = 50;
  tc.thinning = 20;
  tc.burn_in_samples = 10;
  tc.seed = 8;
  return make_benchmark_task(tc);
}

TEST_F(Bundle, RoundTripWithAndWithoutTestSplits) {
  const BenchmarkTask task = small_task();
  write_task_bundle(dir_, task);
  for (const char* f : {"manifest.json", "obs.csv", "train_0.csv", "train_1.csv", "test_0.csv"}) {
    EXPECT_TRUE(fs::exists(dir_ / f)) << f;
  }
  const BenchmarkTask full = read_task_bundle(dir_, TestSplits::load);
  EXPECT_EQ(full.obs, task.obs);
  EXPECT_EQ(full.system.W, task.system.W);
  EXPECT_EQ(full.graph.G, task.graph.G);
  EXPECT_EQ(full.standardization.scale, task.standardization.scale);
  ASSERT_EQ(full.test.size(), 1u);
  EXPECT_EQ(full.test[0].data, task.test[0].data);
  EXPECT_EQ(full.train[1].target, task.train[1].target);
  EXPECT_EQ(full.train[1].delta, task.train[1].delta);
  EXPECT_EQ(full.config.seed, task.config.seed);

  const auto envs = training_environments(full);
  ASSERT_EQ(envs.size(), 3u);
  EXPECT_TRUE(envs[0].targets.empty());
  EXPECT_EQ(envs[2].targets, std::vector<int>{task.train[1].target});
}

TEST_F(Bundle, TrainingLoadNeverOpensTestSplits) {
  write_task_bundle(dir_, small_task());
  // Tripwire: an unreadable test split must not matter unless requested.
  fs::remove(dir_ / "test_0.csv");
  fs::create_directory(dir_ / "test_0.csv");
  const BenchmarkTask t = read_task_bundle(dir_);
  ASSERT_EQ(t.test.size(), 1u);
  EXPECT_EQ(t.test[0].data.size(), 0);
  EXPECT_THROW(read_task_bundle(dir_, TestSplits::load), IoError);
  fs::remove(dir_ / "test_0.csv");
  EXPECT_THROW(read_task_bundle(dir_, TestSplits::load), IoError);
}

TEST_F(Bundle, DimensionMismatchRaisesIoError) {
  write_task_bundle(dir_, small_task());
  write_samples_csv(dir_ / "train_0.csv", Samples::Zero(3, 2));
  EXPECT_THROW(read_task_bundle(dir_), IoError);
}

TEST(Report, CsvAndJsonShapes) {
  std::vector<InterventionEval> rows(2);
  rows[0].id = 0;
  rows[0].target = 3;
  rows[0].delta = 1.5;
  rows[0].w2 = 0.25;
  rows[0].mse = 0.125;
  rows[0].sinkhorn_converged = true;
  rows[1].id = 1;
  rows[1].target = 1;
  rows[1].status = EvalStatus::diverged;
  const EvalReport r = aggregate(rows);
  EXPECT_EQ(report_csv(r),
            "intervention_id,target,delta,w2,mse,status\n"
            "0,3,1.5,0.25,0.125,ok\n"
            "1,1,0,nan,nan,diverged\n");
  const Json j = report_to_json(r);
  EXPECT_EQ(j["failures"], 1);
  EXPECT_EQ(j["w2"]["median"], 0.25);
  EXPECT_TRUE(j["interventions"][1]["w2"].is_null());
}

TEST(Trace, CsvHeader) {
  const fs::path p = fs::temp_directory_path() / "statdiff_trace.csv";
  write_trace_csv(p, {TraceRow{100, 2, 0.5, 1.25}});
  EXPECT_EQ(io::read_text(p), "step,env,kds,penalty\n100,2,0.5,1.25\n");
  fs::remove(p);
}

}  // namespace
}  // namespace statdiff
