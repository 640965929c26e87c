#include "doctest.h"
#include "experiments.hpp"
#include "records.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

using namespace backlink;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string out_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("backlink_cfg_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  return p.string();
}

std::vector<json> read_records(const std::string& path) {
  std::ifstream in(path);
  std::vector<json> out;
  for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json tiny_resnet(std::size_t modules, std::size_t length) {
  return {{"name", "tiny"},
          {"network", {{"preset", "tiny-resnet"}, {"classes", 3}}},
          {"dataset", {{"train_per_class", 12}, {"test_per_class", 4}}},
          {"partition", {{"modules", modules}}},
          {"backlink", {{"length", length}, {"alpha", 0.5}}},
          {"optimizer", {{"lr", 0.05}}},
          {"training", {{"epochs", 2}, {"batch_size", 12}}},
          {"seed", 5}};
}

json tiny_dense(std::size_t modules, std::size_t length) {
  json units = json::array();
  for (int i = 0; i < 4; ++i) units.push_back(json::array({{{"type", "dense"}, {"out", 6}}, {{"type", "relu"}}}));
  return {{"name", "dense"},
          {"network", {{"input", {6}}, {"classes", 3}, {"units", units}}},
          {"dataset", {{"train_per_class", 8}, {"test_per_class", 4}}},
          {"partition", {{"modules", modules}}},
          {"backlink", {{"length", length}, {"alpha", 0.5}}},
          {"training", {{"epochs", 2}, {"batch_size", 8}}},
          {"precision", "wide"},
          {"seed", 2}};
}

ExperimentConfig with_out(json j, const std::string& name) {
  j["output"] = {{"dir", out_dir(name)}};
  return parse_config(j);
}

}  // namespace

TEST_CASE("config validation") {
  auto c = parse_config(tiny_resnet(4, 0));
  CHECK_NOTHROW(c.validate());

  json big = tiny_resnet(16, 0);
  big["network"] = {{"preset", "cnn8"}};
  auto bad = parse_config(big);
  try {
    bad.validate();
    FAIL("expected a validation error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("exceeds") != std::string::npos);
  }

  json unknown = tiny_resnet(2, 0);
  unknown["backlink"]["lenght"] = 1;
  CHECK_THROWS_WITH_AS(parse_config(unknown), doctest::Contains("lenght"), ConfigError);
  CHECK_THROWS_AS(load_config_string("{not json"), ConfigError);
  CHECK_THROWS_AS(load_config_file("/nonexistent/config.json"), IoError);

  json off_grid = tiny_resnet(2, 1);
  off_grid["backlink"]["alpha"] = 0.3;
  auto w = parse_config(off_grid);
  w.validate();
  CHECK(w.warnings.size() == 1);

  json clamp = tiny_resnet(2, 9);
  auto cl = parse_config(clamp);
  cl.validate();
  CHECK(cl.warnings.size() == 1);

  json alpha = tiny_resnet(2, 1);
  alpha["backlink"]["alpha"] = 1.5;
  CHECK_THROWS_AS(parse_config(alpha).validate(), ConfigError);
  json stale = tiny_resnet(2, 1);
  stale["execution"] = {{"mode", "pipeline"}, {"staleness", 2}};
  CHECK_THROWS_AS(parse_config(stale).validate(), ConfigError);
  json mode = tiny_resnet(2, 1);
  mode["execution"] = {{"mode", "async"}};
  CHECK_THROWS_AS(parse_config(mode), ConfigError);
}

TEST_CASE("config defaults and presets") {
  json j = tiny_resnet(2, 1);
  j["optimizer"] = {{"preset", "resnet32"}};
  j["training"].erase("epochs");
  auto c = parse_config(j);
  CHECK(c.sgd.lr == 0.5);
  CHECK(c.sgd.weight_decay == 5e-4);
  CHECK(c.epochs == 200);
  CHECK(c.schedule.milestones == std::vector<std::size_t>{100, 150});
  CHECK(c.pipeline.staleness == 0);
  j["execution"] = {{"mode", "pipeline"}};
  CHECK(parse_config(j).pipeline.staleness == 1);
}

TEST_CASE("config round trip and hash") {
  auto c = parse_config(tiny_resnet(3, 1));
  const auto again = parse_config(to_json(c));
  CHECK(to_json(again) == to_json(c));
  CHECK(config_hash(again) == config_hash(c));
  CHECK(config_hash(c).size() == 16);

  json reseeded = tiny_resnet(3, 1);
  reseeded["seed"] = 99;
  reseeded["output"] = {{"dir", "elsewhere"}};
  CHECK(config_hash(parse_config(reseeded)) == config_hash(c));
  json changed = tiny_resnet(3, 2);
  CHECK(config_hash(parse_config(changed)) != config_hash(c));
}

TEST_CASE("record schema") {
  json r = make_record("run_summary", "0123456789abcdef");
  r["seed"] = 1;
  r["epochs"] = 3;
  r["final_test_accuracy"] = 0.5;
  CHECK_NOTHROW(validate_record(r));

  json missing = r;
  missing.erase("epochs");
  CHECK_THROWS_AS(validate_record(missing), VerificationError);
  json extra = r;
  extra["note"] = "x";
  CHECK_THROWS_AS(validate_record(extra), VerificationError);
  json wrong = r;
  wrong["final_test_accuracy"] = 1.5;
  CHECK_THROWS_AS(validate_record(wrong), VerificationError);
  json version = r;
  version["schema_version"] = 2;
  CHECK_THROWS_AS(validate_record(version), VerificationError);
  json hash = r;
  hash["config_hash"] = "abc";
  CHECK_THROWS_AS(validate_record(hash), VerificationError);
  CHECK_THROWS_AS(validate_record(make_record("nope", "0123456789abcdef")), VerificationError);
  CHECK(format_number(0.1) == "0.1");
}

TEST_CASE("train writes one record per epoch and repeats bit for bit") {
  auto c = with_out(tiny_resnet(4, 0), "train_a");
  const auto r = cmd_train(c);
  CHECK(r.status == 0);
  const auto records = read_records(r.files[0]);
  std::size_t epochs = 0;
  for (const auto& rec : records) {
    CHECK_NOTHROW(validate_record(rec));
    CHECK(rec["config_hash"] == config_hash(c));
    epochs += rec["record"] == "epoch";
  }
  CHECK(epochs == 2);
  CHECK(records.front()["record"] == "run_header");
  CHECK(records.back()["record"] == "aggregate");

  auto again = with_out(tiny_resnet(4, 0), "train_b");
  const auto r2 = cmd_train(again);
  CHECK(slurp(r.files[0]) == slurp(r2.files[0]));
  CHECK(slurp(r.files[1]) == slurp(r2.files[1]));
}

TEST_CASE("multi-seed training aggregates mean and std") {
  json j = tiny_dense(2, 1);
  j["seeds"] = 3;
  const auto r = cmd_train(with_out(j, "seeds"));
  const auto agg = read_records(r.files[0]).back();
  REQUIRE(agg["record"] == "aggregate");
  const auto per = agg["per_seed"].get<std::vector<double>>();
  REQUIRE(per.size() == 3);
  const double mean = (per[0] + per[1] + per[2]) / 3;
  double var = 0;
  for (double p : per) var += (p - mean) * (p - mean);
  CHECK(agg["final_test_accuracy_mean"].get<double>() == doctest::Approx(mean));
  CHECK(agg["final_test_accuracy_std"].get<double>() == doctest::Approx(std::sqrt(var / 2)));
  CHECK(agg["seeds"] == json::array({2, 3, 4}));
}

TEST_CASE("pipeline-mode training runs through the same command") {
  json j = tiny_dense(2, 1);
  j["execution"] = {{"mode", "pipeline"}};
  const auto r = cmd_train(with_out(j, "pipe_train"));
  CHECK(r.status == 0);
  CHECK(read_records(r.files[0]).front()["mode"] == "pipeline");
}

TEST_CASE("gradcheck command") {
  SUBCASE("K=1 reports BP equivalence") {
    const auto r = cmd_gradcheck(with_out(tiny_dense(1, 0), "gc1"));
    CHECK(r.status == 0);
    bool found = false;
    for (const auto& rec : read_records(r.files[0]))
      if (rec["record"] == "check" && rec["name"] == "bp_equivalence") found = rec["passed"].get<bool>();
    CHECK(found);
  }
  SUBCASE("K=2 full span passes the monolithic oracle") {
    const auto r = cmd_gradcheck(with_out(tiny_dense(2, 2), "gc2"));
    CHECK(r.status == 0);
    bool found = false;
    for (const auto& rec : read_records(r.files[0]))
      if (rec["record"] == "check" && rec["name"] == "full_span_monolithic") {
        found = true;
        CHECK(rec["max_error"].get<double>() <= 1e-6);
      }
    CHECK(found);
  }
  SUBCASE("a corrupted gradient fails the command") {
    json j = tiny_dense(2, 1);
    j["gradcheck"] = {{"corrupt", true}};
    CHECK(cmd_gradcheck(with_out(j, "gc3")).status == 2);
  }
  SUBCASE("oversized networks are rejected") {
    json j = tiny_resnet(2, 1);
    j["network"] = {{"preset", "resnet32"}};
    CHECK_THROWS_AS(cmd_gradcheck(with_out(j, "gc4")), ConfigError);
  }
}

TEST_CASE("costmodel command") {
  json j = {{"name", "cm"},
            {"network", {{"preset", "uniform55"}}},
            {"costmodel", {{"modules", {1, 2, 4, 8, 16}}, {"lengths", {0, 1, 2}}, {"uniform", true}}}};
  const auto r = cmd_costmodel(with_out(j, "cm"));
  const auto rows = read_records(r.files[0]);
  CHECK(rows.size() == 1 + 4 * 3);
  CHECK(rows[0]["K"] == 1);
  CHECK(rows[0]["relative_memory"] == 1.0);
  CHECK(rows[0]["relative_runtime"] == 1.0);
  for (const auto& row : rows)
    if (row["K"] == 16 && row["mode"] == "gll") CHECK(row["backbone_peak"].get<double>() == 4.0);
  for (std::size_t l : {0u, 1u, 2u}) {
    double prev = 2.0;
    for (const auto& row : rows)
      if (row["K"] != 1 && row["l"] == l) {
        CHECK(row["relative_memory"].get<double>() <= prev);
        prev = row["relative_memory"].get<double>();
      }
  }
  for (const auto& row : rows)
    if (row["K"] == 2 && row["mode"] == "gll") CHECK(row["steady_state_speedup"].get<double>() >= 1.8);
  CHECK(fs::exists(r.files[1]));
}

TEST_CASE("pipesim command") {
  json j = tiny_dense(2, 1);
  j["execution"] = {{"mode", "pipeline"}, {"staleness", 1}};
  j["pipesim"] = {{"equivalence_epochs", 2}};
  const auto r = cmd_pipesim(with_out(j, "ps"));
  CHECK(r.status == 0);
  CHECK(r.summary["equivalence_passed"] == true);
  CHECK(r.summary["queue_conservation"] == true);
  const auto trace = read_records(r.files[1]);
  CHECK(trace.size() > 0);
  for (const auto& e : trace) CHECK(e["end"].get<double>() >= e["start"].get<double>());
}
