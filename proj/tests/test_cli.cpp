#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "gaitstage/model.hpp"
#include "support/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

std::string g_cli;  // path to the gaitstage binary, from argv[1]

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

RunResult run(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt";
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = g_cli + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  RunResult result;
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.out = slurp(out);
  result.err = slurp(err);
  return result;
}

// small but trainable setup: p=20 walks of 30 samples, 2 epochs
void write_config(const fs::path& path, const fs::path& data_dir, const fs::path& out_dir,
                  std::size_t folds) {
  std::ofstream out(path, std::ios::trunc);
  out << "{\n"
      << "  \"seed\": 42,\n"
      << "  \"verbosity\": 0,\n"
      << "  \"data\": {\"dir\": \"" << data_dir.string() << "\"},\n"
      << "  \"output\": {\"dir\": \"" << out_dir.string() << "\"},\n"
      << "  \"model\": {\"segment_length\": 20, \"classifier_hidden\": [16, 8]},\n"
      << "  \"train\": {\"batch_size\": 8, \"max_epochs\": 2, \"patience\": 5},\n"
      << "  \"cv\": {\"folds\": " << folds << "}\n"
      << "}\n";
}

struct Workspace {
  fs::path root;
  fs::path data;
  explicit Workspace(const std::string& name) {
    root = fs::temp_directory_path() / name;
    fs::remove_all(root);
    fs::create_directories(root);
    data = root / "data";
  }
  ~Workspace() { fs::remove_all(root); }
};

}  // namespace

TEST_CASE("ingest fails with exit 2 on an empty data directory") {
  Workspace ws("gaitstage_cli_empty");
  fs::create_directories(ws.data);
  {
    std::ofstream demo(ws.data / "demographics.txt");
    demo << "subject_id group hoehn_yahr\n";
  }
  write_config(ws.root / "config.json", ws.data, ws.root / "out", 2);
  const RunResult result = run("ingest --config " + (ws.root / "config.json").string(), ws.root);
  CHECK(result.code == 2);
  CHECK(result.err.find("no walk files found") != std::string::npos);
}

TEST_CASE("ingest writes a manifest and skips corrupt files with a warning") {
  Workspace ws("gaitstage_cli_ingest");
  synthetic::write_toy_dataset(ws.data, 2, 1, 30, 7);
  {
    std::ofstream bad(ws.data / "GaPt99_01.txt");
    bad << "0.01 1 2 3\n";  // wrong column count
  }
  write_config(ws.root / "config.json", ws.data, ws.root / "out", 2);
  const std::string before = slurp(ws.data / "GaCo01_01.txt");
  const RunResult result = run("ingest --config " + (ws.root / "config.json").string(), ws.root);
  CHECK(result.code == 0);
  CHECK(result.out.find("class distribution") != std::string::npos);
  CHECK(result.out.find("90") != std::string::npos);  // reference supports printed
  CHECK(slurp(ws.data / "GaCo01_01.txt") == before);  // inputs never mutated

  const std::string manifest = slurp(ws.root / "out" / "manifest.csv");
  CHECK(manifest.find("GaPt99") == std::string::npos);
  CHECK(manifest.find("GaCo01,01,30,2,healthy") != std::string::npos);
  CHECK(manifest.find("GaPt21,01,30,2,stage2") != std::string::npos);
  CHECK(fs::exists(ws.root / "out" / "config_resolved.json"));
}

TEST_CASE("crossval produces reports, histories and checkpoints; reruns are byte-identical") {
  Workspace ws("gaitstage_cli_crossval");
  synthetic::write_toy_dataset(ws.data, 3, 1, 30, 11);
  write_config(ws.root / "config.json", ws.data, ws.root / "out1", 2);
  const RunResult first =
      run("crossval --config " + (ws.root / "config.json").string(), ws.root);
  CHECK(first.code == 0);
  CHECK(first.out.find("walk-level accuracy") != std::string::npos);

  const char* files[] = {"report_walk.csv",        "report_walk.json",
                         "report_segment.csv",     "report_segment.json",
                         "confusion_walk.csv",     "confusion_segment.csv",
                         "history_fold01.csv",     "history_fold02.csv",
                         "checkpoint_fold01.bin",  "checkpoint_fold02.bin",
                         "config_resolved.json"};
  for (const char* f : files) {
    CHECK_MESSAGE(fs::exists(ws.root / "out1" / f), "missing ", f);
  }

  // identical config and seed into a second output directory
  const RunResult second = run("crossval --config " + (ws.root / "config.json").string() +
                                   " --set output.dir=" + (ws.root / "out2").string(),
                               ws.root);
  CHECK(second.code == 0);
  for (const char* f : files) {
    if (std::string(f) == "config_resolved.json") continue;  // carries the output dir
    CHECK_MESSAGE(slurp(ws.root / "out1" / f) == slurp(ws.root / "out2" / f),
                  "file differs between runs: ", f);
  }
}

TEST_CASE("config overrides land in the resolved echo") {
  Workspace ws("gaitstage_cli_override");
  synthetic::write_toy_dataset(ws.data, 2, 1, 30, 13);
  write_config(ws.root / "config.json", ws.data, ws.root / "out", 2);
  const RunResult result = run("ingest --config " + (ws.root / "config.json").string() +
                                   " --set train.batch_size=64 --set seed=7",
                               ws.root);
  CHECK(result.code == 0);
  const std::string echo = slurp(ws.root / "out" / "config_resolved.json");
  CHECK(echo.find("\"batch_size\": 64") != std::string::npos);
  CHECK(echo.find("\"seed\": 7") != std::string::npos);
}

TEST_CASE("ablate emits one row per variant in fixed order") {
  Workspace ws("gaitstage_cli_ablate");
  synthetic::write_toy_dataset(ws.data, 2, 1, 30, 17);
  write_config(ws.root / "config.json", ws.data, ws.root / "out", 2);
  const RunResult result = run("ablate --config " + (ws.root / "config.json").string() +
                                   " --set train.max_epochs=1",
                               ws.root);
  CHECK(result.code == 0);
  std::ifstream in(ws.root / "out" / "ablation_summary.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "variant,weighted_precision,weighted_recall,weighted_f1,accuracy");
  const char* expected[] = {"A,", "B,", "C,", "D,", "full,"};
  for (const char* prefix : expected) {
    REQUIRE(std::getline(in, line));
    CHECK(line.rfind(prefix, 0) == 0);
  }
  CHECK_FALSE(std::getline(in, line));
  for (const char* v : {"A", "B", "C", "D"}) {
    CHECK(fs::exists(ws.root / "out" / (std::string("report_walk_") + v + ".csv")));
  }
}

TEST_CASE("predict stages a walk from a trained checkpoint") {
  Workspace ws("gaitstage_cli_predict");
  synthetic::write_toy_dataset(ws.data, 3, 1, 30, 19);
  write_config(ws.root / "config.json", ws.data, ws.root / "out", 2);
  REQUIRE(run("crossval --config " + (ws.root / "config.json").string(), ws.root).code == 0);
  const std::string checkpoint = (ws.root / "out" / "checkpoint_fold01.bin").string();

  SUBCASE("a long walk is voted over its segments") {
    const auto walk = synthetic::make_walk("GaPt77", "01", gaitstage::Cohort::parkinson,
                                           gaitstage::Severity::stage2, 110, 23);
    synthetic::write_walk_file(walk, (ws.root / "GaPt77_01.txt").string());
    const RunResult result = run("predict --config " + (ws.root / "config.json").string() +
                                     " --checkpoint " + checkpoint + " --walk " +
                                     (ws.root / "GaPt77_01.txt").string(),
                                 ws.root);
    CHECK(result.code == 0);
    CHECK(result.out.find("predicted stage:") != std::string::npos);
    // (110 - 20)/10 + 1 = 10 segments
    CHECK(result.out.find("10 segments") != std::string::npos);
    CHECK(result.out.find("vote shares") != std::string::npos);
  }

  SUBCASE("walks shorter than a segment exit with code 3") {
    const auto walk = synthetic::make_walk("GaPt78", "01", gaitstage::Cohort::parkinson,
                                           gaitstage::Severity::stage2, 19, 29);
    synthetic::write_walk_file(walk, (ws.root / "GaPt78_01.txt").string());
    const RunResult result = run("predict --config " + (ws.root / "config.json").string() +
                                     " --checkpoint " + checkpoint + " --walk " +
                                     (ws.root / "GaPt78_01.txt").string(),
                                 ws.root);
    CHECK(result.code == 3);
    CHECK(result.err.find("walk too short") != std::string::npos);
  }

  SUBCASE("checkpoint built for another sensor count names both sides") {
    gaitstage::ModelConfig toy;
    toy.sensor_count = 3;
    toy.segment_length = 20;
    toy.classifier_hidden = {8, 8};
    const auto model = gaitstage::build_model(toy, 1);
    const std::string odd = (ws.root / "odd.bin").string();
    gaitstage::save_checkpoint(model, odd);
    const auto walk = synthetic::make_walk("GaPt79", "01", gaitstage::Cohort::parkinson,
                                           gaitstage::Severity::stage2, 40, 31);
    synthetic::write_walk_file(walk, (ws.root / "GaPt79_01.txt").string());
    const RunResult result = run("predict --config " + (ws.root / "config.json").string() +
                                     " --checkpoint " + odd + " --walk " +
                                     (ws.root / "GaPt79_01.txt").string(),
                                 ws.root);
    CHECK(result.code == 3);
    CHECK(result.err.find("3") != std::string::npos);
    CHECK(result.err.find("18") != std::string::npos);
  }
}

int main(int argc, char** argv) {
  if (argc > 1 && argv[1][0] != '-') {
    g_cli = argv[1];
    --argc;
    ++argv;
  } else {
    g_cli = "./tools/gaitstage";
  }
  doctest::Context context;
  context.applyCommandLine(argc, argv);
  return context.run();
}
