#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "sslv/experiment.hpp"

using namespace sslv;
using namespace sslv::cli;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const char* name) {
  const auto path = fs::temp_directory_path() / name;
  fs::remove_all(path);
  fs::create_directories(path);
  return path.string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string tiny_supervised_config(const std::string& out_dir) {
  std::ostringstream cfg;
  cfg << "method = \"supervised\"\n";
  cfg << "output_dir = \"" << out_dir << "\"\n";
  cfg << "seeds = [1]\n";
  cfg << "[dataset]\n";
  cfg << "num_classes = 2\n";
  cfg << "clips_per_class = 6\n";
  cfg << "frames = 6\n";
  cfg << "height = 8\n";
  cfg << "width = 8\n";
  cfg << "noise_sigma = 0.05\n";
  cfg << "seed = 40\n";
  cfg << "[split]\n";
  cfg << "labeled_fraction = 0.34\n";
  cfg << "val_fraction = 0.17\n";
  cfg << "test_fraction = 0.34\n";
  cfg << "[model]\n";
  cfg << "embed_dim = 4\n";
  cfg << "conv1_channels = 2\n";
  cfg << "conv2_channels = 3\n";
  cfg << "frames_per_view = 3\n";
  cfg << "[train]\n";
  cfg << "epochs = 2\n";
  cfg << "batch_size = 2\n";
  return cfg.str();
}

}  // namespace

TEST_CASE("config parsing: defaults, overrides, and strictness") {
  const auto cfg = parse_config_text(
      "method = \"semivt\"\n[semivt]\ntau = 0.9\nlambda_tcr = 0.5\n");
  CHECK(cfg.method == Method::semivt);
  CHECK(cfg.semivt.tau == doctest::Approx(0.9));
  CHECK(cfg.semivt.lambda_tcr == doctest::Approx(0.5));
  CHECK(cfg.semivt.margin == doctest::Approx(0.2));  // untouched default
  CHECK(cfg.train.epochs == 30);

  CHECK_THROWS_AS(parse_config_text("method = \"nonsense\"\n"), ParseError);
  CHECK_THROWS_AS(parse_config_text("unknown_key = 3\n"), ParseError);
  CHECK_THROWS_AS(parse_config_text("[train]\nepochs = \"many\"\n"), ParseError);
  CHECK_THROWS_AS(parse_config_text("[train]\nepochs = 3\nepochs = 4\n"),
                  ParseError);
  CHECK_THROWS_AS(parse_config_text("method = \"encore\"\n"), ParseError);
  try {
    parse_config_text("[train]\nepochs = 5\nbogus = 1\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("bogus") != std::string::npos);
  }
}

TEST_CASE("resolved config round-trips byte-identically") {
  ExperimentConfig cfg;
  cfg.method = Method::semivt;
  cfg.seeds = {3, 5, 8};
  cfg.train.lr = 0.037;
  cfg.semivt.tau = 0.83;
  cfg.split.labeled_fraction = 1.0 / 32.0;
  const auto text = resolved_config_text(cfg);
  const auto parsed = parse_config_text(text);
  CHECK(resolved_config_text(parsed) == text);

  ExperimentConfig enc;
  enc.method = Method::encore;
  enc.dataset_kind = "segmentation";
  enc.encore.percentiles = {12.5, 50.0};
  const auto text2 = resolved_config_text(enc);
  CHECK(resolved_config_text(parse_config_text(text2)) == text2);
}

TEST_CASE("run_experiment produces reports and a deterministic aggregate") {
  const auto out1 = tmp_dir("sslv_run_a");
  const auto out2 = tmp_dir("sslv_run_b");
  auto cfg = parse_config_text(tiny_supervised_config(out1));

  const auto summary = run_experiment(cfg);
  CHECK(summary.all_ok());
  CHECK(fs::exists(fs::path(out1) / "resolved.toml"));
  CHECK(fs::exists(fs::path(out1) / "manifest.jsonl"));
  CHECK(fs::exists(fs::path(out1) / "seed_1" / "report.json"));
  const auto csv1 = read_file(summary.aggregate_csv_path);
  // header + one row
  CHECK(std::count(csv1.begin(), csv1.end(), '\n') == 2);
  CHECK(csv1.find("supervised,1,test,") != std::string::npos);

  // re-running the resolved config elsewhere reproduces the bytes
  auto cfg2 = parse_config_file((fs::path(out1) / "resolved.toml").string());
  cfg2.output_dir = out2;
  const auto summary2 = run_experiment(cfg2);
  const auto csv2 = read_file(summary2.aggregate_csv_path);
  CHECK(csv1 == csv2);

  const auto report = nlohmann::json::parse(
      read_file((fs::path(out1) / "seed_1" / "report.json").string()));
  CHECK(report["method"] == "supervised");
  CHECK(report["test_metrics"].contains("accuracy"));

  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST_CASE("dist runs emit stage-1 and stage-2 rows") {
  const auto out = tmp_dir("sslv_run_dist");
  auto text = tiny_supervised_config(out);
  text.replace(text.find("\"supervised\""), 12, "\"dist\"");
  auto cfg = parse_config_text(text);
  const auto summary = run_experiment(cfg);
  CHECK(summary.all_ok());
  const auto csv = read_file(summary.aggregate_csv_path);
  CHECK(csv.find("dist,1,test,1,") != std::string::npos);
  CHECK(csv.find("dist,1,test,2,") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("compare_runs pairs seeds and zeroes self-deltas") {
  const auto dir_a = tmp_dir("sslv_cmp_a");
  const auto dir_b = tmp_dir("sslv_cmp_b");
  auto write_aggregate = [](const std::string& dir, const std::string& method,
                            const std::vector<std::pair<uint64_t, double>>& accs) {
    std::ofstream out(fs::path(dir) / "aggregate.csv", std::ios::binary);
    out << kAggregateHeader << "\n";
    for (const auto& [seed, acc] : accs) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s,%llu,test,,%.6f,%.6f,,\n",
                    method.c_str(), static_cast<unsigned long long>(seed), acc,
                    acc);
      out << buf;
    }
  };
  write_aggregate(dir_a, "supervised",
                  {{1, 0.5}, {2, 0.7}, {3, 0.6}, {4, 0.9}, {5, 0.8}});
  write_aggregate(dir_b, "semivt",
                  {{1, 0.6}, {2, 0.9}, {3, 0.7}, {4, 0.9}, {5, 0.9}});

  // self comparison: all deltas are zero
  const auto self_rows = compare_runs({dir_a, dir_a}, "");
  for (const auto& row : self_rows) {
    CHECK(row.delta_median == doctest::Approx(0.0));
    for (const auto& [seed, delta] : row.per_seed_delta)
      CHECK(delta == doctest::Approx(0.0));
  }

  const auto rows = compare_runs({dir_a, dir_b}, "supervised");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].method == "supervised");
  CHECK(rows[0].median == doctest::Approx(0.7));  // brute-force median of 5
  CHECK(rows[1].method == "semivt");
  CHECK(rows[1].median == doctest::Approx(0.9));
  CHECK(rows[1].n_seeds == 5);
  // paired deltas: 0.1, 0.2, 0.1, 0.0, 0.1 -> median 0.1
  CHECK(rows[1].delta_median == doctest::Approx(0.1));
  const auto csv = comparison_csv(rows);
  CHECK(csv.find("semivt") != std::string::npos);
  CHECK(comparison_table(rows).find("median") != std::string::npos);

  CHECK_THROWS_AS(compare_runs({dir_a}, ""), InvalidInput);
  CHECK_THROWS_AS(compare_runs({dir_a, "/nonexistent_dir_xyz"}, ""), InvalidInput);
  CHECK_THROWS_AS(compare_runs({dir_a, dir_b}, "missing_method"), InvalidInput);

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("main_run maps failures to exit codes") {
  std::ostringstream out, err;
  CHECK(main_run("/nonexistent_config.toml", "", -1, out, err) == 2);
  CHECK(err.str().find("config error") != std::string::npos);

  const auto bad = (fs::temp_directory_path() / "sslv_bad_config.toml").string();
  {
    std::ofstream f(bad);
    f << "method = \"supervised\"\nbroken\n";
  }
  std::ostringstream out2, err2;
  CHECK(main_run(bad, "", -1, out2, err2) == 2);
  std::remove(bad.c_str());
}

TEST_CASE("seed override narrows the run to one seed") {
  const auto out_dir = tmp_dir("sslv_run_override");
  const auto cfg_path = (fs::path(out_dir) / "config.toml").string();
  auto text = tiny_supervised_config(out_dir + "/run");
  text.replace(text.find("seeds = [1]"), 11, "seeds = [1, 2]");
  {
    std::ofstream f(cfg_path);
    f << text;
  }
  std::ostringstream log, err;
  const int code = main_run(cfg_path, "", 2, log, err);
  CHECK(code == 0);
  const auto csv = read_file(out_dir + "/run/aggregate.csv");
  CHECK(csv.find("supervised,2,") != std::string::npos);
  CHECK(csv.find("supervised,1,") == std::string::npos);
  fs::remove_all(out_dir);
}
