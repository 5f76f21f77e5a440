#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>

#include <json.hpp>

#include "support.hpp"
#include "xaits/text.hpp"

namespace xaits {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome cli(const fs::path& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string command = std::string("'") + XAITS_CLI + "' " + args + " >'" + out.string() + "' 2>'" +
                              err.string() + "'";
  const int status = std::system(command.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = read_file(out);
  o.err = read_file(err);
  return o;
}

json last_json_line(const std::string& text) {
  const auto lines = split(trim(text), '\n');
  return json::parse(lines.back());
}

void write_config(const fs::path& path, const json& overrides = json::object()) {
  json doc = {{"output_dir", "runs"},
              {"dataset", {{"source", "synthetic"}, {"n_samples", 30}, {"series_len", 16}}},
              {"model", {{"kind", "mlp"}, {"hidden", {6}}, {"epochs", 10}}},
              {"methods", {"saliency", "occlusion"}},
              {"strategies", {"topk"}},
              {"verifications", {"point_zero", "interval_mean"}}};
  doc.update(overrides);
  write_file(path, doc.dump(2));
}

TEST(Cli, RunPrintsRunDirAndIsDeterministic) {
  const auto dir = testing::scratch_dir("cli-run");
  write_config(dir / "c.json");
  const auto first = cli(dir, "-q run '" + (dir / "c.json").string() + "'");
  ASSERT_EQ(first.code, 0) << first.err;
  const fs::path run_dir(std::string(trim(first.out)));
  EXPECT_EQ(run_dir.parent_path(), dir / "runs");
  const std::string scores = read_file(run_dir / "scores.csv");
  const std::string report = read_file(run_dir / "report.json");
  EXPECT_EQ(scores.rfind("method,strategy,verification,variant,metric,value,delta\n", 0), 0u);

  const auto second = cli(dir, "--jobs 2 run '" + (dir / "c.json").string() + "'");
  ASSERT_EQ(second.code, 0) << second.err;
  EXPECT_EQ(trim(second.out), trim(first.out));
  EXPECT_EQ(read_file(run_dir / "scores.csv"), scores);
  EXPECT_EQ(read_file(run_dir / "report.json"), report);
  EXPECT_FALSE(second.err.empty());  // progress log without -q

  const auto reseeded = cli(dir, "-q --seed 14 --out '" + (dir / "other").string() + "' run '" +
                                     (dir / "c.json").string() + "'");
  ASSERT_EQ(reseeded.code, 0) << reseeded.err;
  EXPECT_EQ(fs::path(std::string(trim(reseeded.out))).parent_path(), dir / "other");

  const auto summary = cli(dir, "report '" + run_dir.string() + "'");
  ASSERT_EQ(summary.code, 0) << summary.err;
  EXPECT_NE(summary.out.find("ranking"), std::string::npos);
  EXPECT_NE(summary.out.find("occlusion"), std::string::npos);
}

TEST(Cli, ConfigErrorsAreMachineReadable) {
  const auto dir = testing::scratch_dir("cli-errors");
  write_config(dir / "c.json", {{"verifications", json::array()}});
  const auto empty = cli(dir, "run '" + (dir / "c.json").string() + "'");
  EXPECT_EQ(empty.code, 2);
  const json record = last_json_line(empty.err);
  EXPECT_EQ(record["error"]["stage"], "config");
  EXPECT_EQ(record["error"]["kind"], "config_error");
  EXPECT_FALSE(fs::exists(dir / "runs"));

  const auto missing = cli(dir, "run '" + (dir / "absent.json").string() + "'");
  EXPECT_EQ(missing.code, 1);
  EXPECT_EQ(last_json_line(missing.err)["error"]["kind"], "io_error");

  write_config(dir / "ok.json");
  const auto method = cli(dir, "-q attribute '" + (dir / "ok.json").string() + "' deeplift");
  EXPECT_EQ(method.code, 2);
  const json m = last_json_line(method.err);
  EXPECT_NE(m["error"]["message"].get<std::string>().find("saliency"), std::string::npos);

  const auto usage = cli(dir, "frobnicate");
  EXPECT_NE(usage.code, 0);

  const auto no_dir = cli(dir, "report '" + (dir / "nothing").string() + "'");
  EXPECT_EQ(no_dir.code, 1);
}

TEST(Cli, AttributeWritesOneRowPerTestSample) {
  const auto dir = testing::scratch_dir("cli-attribute");
  write_config(dir / "c.json");
  const auto target = dir / "sal.csv";
  const auto r = cli(dir, "-q --out '" + target.string() + "' attribute '" + (dir / "c.json").string() + "' saliency");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string text = read_file(target);
  const auto lines = split(trim(text), '\n');
  ASSERT_EQ(lines.size(), 1u + 16u);  // header + 8 test samples per class
  EXPECT_EQ(lines[0].rfind("# xaits-attributions method=saliency", 0), 0u);
}

TEST(Cli, SynthWritesDatasetAndTruth) {
  const auto dir = testing::scratch_dir("cli-synth");
  const auto r = cli(dir, "synth n_samples=10,series_len=12,seed=3 '" + (dir / "spike.tsv").string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string data = read_file(dir / "spike.tsv");
  const auto rows = split(trim(data), '\n');
  EXPECT_EQ(rows.size(), 10u);
  const std::string truth_text = read_file(dir / "spike.truth.csv");
  const auto truth = split(trim(truth_text), '\n');
  EXPECT_EQ(truth.size(), 11u);
  EXPECT_EQ(truth[0], "sample_id,indices");

  write_file(dir / "spec.json", R"({"n_samples": 10, "series_len": 12, "seed": 3})");
  const auto from_file = cli(dir, "synth '" + (dir / "spec.json").string() + "' '" + (dir / "b.tsv").string() + "'");
  ASSERT_EQ(from_file.code, 0) << from_file.err;
  EXPECT_EQ(read_file(dir / "b.tsv"), read_file(dir / "spike.tsv"));

  const auto bad = cli(dir, "synth colour=3 '" + (dir / "c.tsv").string() + "'");
  EXPECT_EQ(bad.code, 2);
  const auto short_series = cli(dir, "synth series_len=4 '" + (dir / "c.tsv").string() + "'");
  EXPECT_EQ(short_series.code, 2);
}

}  // namespace
}  // namespace xaits
