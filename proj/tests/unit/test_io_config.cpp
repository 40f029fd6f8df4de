#include <gtest/gtest.h>

#include <filesystem>

#include "evts/io.hpp"
#include "evts/run_config.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace evts;
using evts::test::tiny_stfe_config;

namespace {

std::string scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("evts_test_" + name);
  std::filesystem::remove_all(p);
  return p.string();
}

SynthConfig small_synth() {
  SynthConfig s;
  s.n_continual = 4;
  s.n_expanding = 3;
  s.steps_per_day = 8;
  s.days_p1 = 10;
  s.days_p2 = 2;
  s.days_valid = 1;
  s.days_test = 1;
  s.expansion_stages = 2;
  return s;
}

Checkpoint random_checkpoint() {
  Checkpoint ck;
  ck.config.stfe = tiny_stfe_config();
  ck.config.node_dim = 3;
  ck.config.time_dim = 2;
  ck.config.proj_dim = 4;
  ck.config.seed = 17;
  ck.n_vars = 5;
  ck.n_continual = 3;
  ck.steps_per_day = 6;
  Rng rng(9);
  ck.model = Model::init(ck.config, 5, 6, rng);
  ck.model.for_each_buffer([&](const std::string&, Tensor& t) {
    for (auto& v : t.values()) v = rng.normal() / 3.0;
  });
  return ck;
}

}  // namespace

TEST(RunConfig, DefaultsRoundTripThroughJson) {
  const RunConfig def;
  const RunConfig back = parse_run_config(to_json(def));
  EXPECT_EQ(to_json(back), to_json(def));
  const auto keys = run_config_keys();
  const auto doc = nlohmann::ordered_json::parse(to_json(def));
  ASSERT_EQ(doc.size(), keys.size());
  std::size_t i = 0;
  for (const auto& [k, v] : doc.items()) EXPECT_EQ(k, keys[i++]);
}

TEST(RunConfig, OverridesAndRejections) {
  const RunConfig c = parse_run_config(R"({"alpha": 0.5, "variant": "flats_nf", "n_expanding": 6})");
  EXPECT_EQ(c.train.alpha, 0.5);
  EXPECT_EQ(c.train.variant, Variant::FlatsNf);
  EXPECT_EQ(c.synth.n_expanding, 6u);
  EXPECT_EQ(c.train.batch_size, 16u);

  const auto message = [](const std::string& text) {
    try {
      parse_run_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message(R"({"alpah": 0.5})").find("alpah"), std::string::npos);
  EXPECT_NE(message(R"({"batch_size": "big"})").find("batch_size"), std::string::npos);
  EXPECT_NE(message(R"({"batch_size": -3})").find("batch_size"), std::string::npos);
  EXPECT_NE(message(R"({"variant": "best"})").find("variant"), std::string::npos);
  EXPECT_FALSE(message("[1, 2]").empty());
  EXPECT_FALSE(message("{").empty());
  EXPECT_THROW(load_run_config("/nonexistent/evts.json"), ConfigError);
}

TEST(RunConfig, TrainKeysOnly) {
  TrainConfig t;
  t.lr = 0.0025;
  t.strategy = Strategy::Oversample;
  const TrainConfig back = parse_train_config(train_config_json(t));
  EXPECT_EQ(back.lr, 0.0025);
  EXPECT_EQ(back.strategy, Strategy::Oversample);
  EXPECT_THROW(parse_train_config(R"({"n_continual": 3})"), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Checkpoint ck = random_checkpoint();
  const std::string path = scratch_dir("ckpt") + "/model.json";
  save_checkpoint(ck, path);
  Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.n_vars, 5u);
  EXPECT_EQ(back.n_continual, 3u);
  EXPECT_EQ(back.steps_per_day, 6u);
  EXPECT_EQ(back.config.seed, 17u);
  std::vector<Tensor> a, b;
  ck.model.for_each([&](const std::string&, Parameter& p) { a.push_back(p.value); });
  ck.model.for_each_buffer([&](const std::string&, Tensor& t) { a.push_back(t); });
  back.model.for_each([&](const std::string&, Parameter& p) { b.push_back(p.value); });
  back.model.for_each_buffer([&](const std::string&, Tensor& t) { b.push_back(t); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_EQ(checkpoint_json(back), checkpoint_json(ck));
}

TEST(Checkpoint, CorruptionIsReported) {
  const std::string good = checkpoint_json(random_checkpoint());
  EXPECT_THROW(parse_checkpoint(good.substr(0, good.size() / 2)), FormatError);
  auto j = nlohmann::json::parse(good);
  j["parameters"]["head.fc2.bias"]["shape"] = {99};
  EXPECT_THROW(parse_checkpoint(j.dump()), FormatError);
  j = nlohmann::json::parse(good);
  j["parameters"].erase("proj.weight");
  try {
    parse_checkpoint(j.dump());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("proj.weight"), std::string::npos);
  }
  j = nlohmann::json::parse(good);
  j["parameters"]["extra"] = j["parameters"]["proj.bias"];
  EXPECT_THROW(parse_checkpoint(j.dump()), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.json"), FormatError);
}

TEST(DatasetIo, SaveLoadPreservesObservedValues) {
  const EvtsDataset ds = generate_synthetic(small_synth());
  const std::string dir = scratch_dir("data");
  save_dataset(ds, dir);
  const EvtsDataset back = load_dataset(dir);
  EXPECT_EQ(back.n_steps, ds.n_steps);
  EXPECT_EQ(back.stage_sizes, ds.stage_sizes);
  EXPECT_EQ(back.expansion_steps, ds.expansion_steps);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.observed, ds.observed);
  EXPECT_EQ(back.split.test, ds.split.test);
  for (std::size_t t = 0; t < ds.n_steps; ++t)
    for (std::size_t v = 0; v < ds.n_vars; ++v)
      if (ds.is_observed(t, v)) EXPECT_EQ(back.value(t, v), ds.value(t, v));

  const EvtsDataset full = fully_observed(ds);
  save_dataset(full, dir + "_full");
  const EvtsDataset full_back = load_dataset(dir + "_full");
  EXPECT_TRUE(full_back.fully_observed);
  EXPECT_EQ(full_back.values, full.values);
}

TEST(DatasetIo, MissingOrBrokenFilesFail) {
  EXPECT_THROW(load_dataset("/nonexistent/dataset"), FormatError);
  const EvtsDataset ds = generate_synthetic(small_synth());
  const std::string dir = scratch_dir("broken");
  save_dataset(ds, dir);
  write_text(dir + "/values.csv", read_text(dir + "/values.csv") + "1,2\n");
  EXPECT_THROW(load_dataset(dir), FormatError);
}

TEST(Reports, MetricsJsonAndCsv) {
  MetricsReport r;
  r.strategy = "stev";
  r.variant = "focal";
  r.alpha = 0.3;
  r.seed = 2;
  r.continual = GroupMetrics{1.5, 2.0, 10};
  r.expanding = GroupMetrics{2.5, 3.0, 4};
  r.overall = GroupMetrics{1.75, 2.25, 14};
  r.delta_mae = 0.125;
  r.curves = {{1, 0.9, 0.1, 1.2}, {2, 0.8, 0.05, 1.1}};
  r.best_epoch = 2;
  const auto back = parse_metrics_json(metrics_json({r}));
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].expanding->mae, 2.5);
  EXPECT_EQ(back[0].expanding->cells, 4u);
  EXPECT_EQ(*back[0].delta_mae, 0.125);
  EXPECT_FALSE(back[0].afmae.has_value());
  EXPECT_EQ(back[0].curves.size(), 2u);
  EXPECT_EQ(back[0].best_epoch, 2u);

  const std::string csv = metrics_csv({r});
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "strategy,variant,alpha,seed,group,mae,rmse,delta_mae,delta_rmse,afmae");
  EXPECT_NE(csv.find("stev,focal,0.3,2,expanding,2.5,3,0.125,,"), std::string::npos);
  EXPECT_THROW(parse_metrics_json("{}"), FormatError);

  const std::string curves = curves_csv(r.curves);
  EXPECT_EQ(curves.substr(0, curves.find('\n')), "epoch,train_loss,train_cl,val_mae");
  EXPECT_EQ(matrix_csv(Tensor({2, 2}, {1, 0.5, 0.5, 0})), "1,0.5\n0.5,0\n");
}
