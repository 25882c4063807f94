#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "memsum/corpus.hpp"
#include "memsum/evalsvc.hpp"
#include "memsum/experiments.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace memsum;

namespace {

const std::string kCli = MEMSUM_CLI_PATH;

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + kCli + "\" " + args + " >\"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / "memsum_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    SyntheticCorpusConfig sc;
    sc.documents = 24;
    sc.sentences = 6;
    sc.planted = 2;
    sc.seed = 5;
    const auto docs = synthetic_corpus(sc);
    write_dataset(dir / "train.jsonl", {docs.begin(), docs.begin() + 16});
    write_dataset(dir / "valid.jsonl", {docs.begin() + 16, docs.begin() + 20});
    write_dataset(dir / "test.jsonl", {docs.begin() + 20, docs.end()});
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return "\"" + (dir / name).string() + "\""; }
  fs::path path(const std::string& name) const { return dir / name; }
};

}  // namespace

TEST_CASE("help and usage errors") {
  Workspace ws;
  const auto log = ws.path("out.txt");
  CHECK(run("--help", log) == 0);
  for (const char* sub :
       {"oracle", "train", "summarize", "evaluate", "sweep", "redundant", "trace", "eval-serve", "human-stats"}) {
    CAPTURE(sub);
    CHECK(run(std::string(sub) + " --help", log) == 0);
    CHECK(slurp(log).find("--") != std::string::npos);
  }
  CHECK(run("", log) == 1);
  CHECK(run("bogus", log) == 1);
  CHECK(run("oracle --input " + ws / "train.jsonl", log) == 1);  // no --output
  CHECK(run("oracle --input " + ws / "missing.jsonl" + " --output " + ws / "e.jsonl", log) == 1);
  CHECK(run("evaluate --checkpoint x --input " + ws / "test.jsonl" + " --p-thres 2", log) == 1);
  CHECK(run("train --input " + ws / "train.jsonl" + " --output " + ws / "m" + " --variant nope", log) == 1);

  std::ofstream(ws.path("bad.json")) << R"({"inference": {"bogus": 1}})";
  CHECK(run("oracle --config " + ws / "bad.json" + " --input " + ws / "train.jsonl" + " --output " + ws / "e.jsonl",
            log) == 1);
  CHECK(slurp(log).find("bogus") != std::string::npos);

  // Runtime failure: the checkpoint directory does not exist.
  CHECK(run("summarize --checkpoint " + ws / "nowhere" + " --input " + ws / "test.jsonl" + " --output " +
                ws / "s.jsonl",
            log) == 2);
}

TEST_CASE("oracle, train, summarize, evaluate, sweep, redundant and trace") {
  Workspace ws;
  const auto log = ws.path("out.txt");

  REQUIRE(run("oracle --input " + ws / "train.jsonl" + " --output " + ws / "episodes.jsonl" + " --branch 2", log) ==
          0);
  CHECK(fs::file_size(ws.path("episodes.jsonl")) > 0);
  const auto oracle_cfg = json::parse(slurp(ws.path("episodes.jsonl.config.json")));
  CHECK(oracle_cfg.at("command") == "oracle");
  CHECK(oracle_cfg.at("config").at("oracle").at("branching") == 2);
  CHECK(slurp(log).find("resolved config:") != std::string::npos);

  std::ofstream(ws.path("cfg.json")) << R"({"trainer": {"batch_size": 4}})";
  const std::string train = "train --config " + ws / "cfg.json" + " --input " + ws / "train.jsonl" + " --valid " +
                            ws / "valid.jsonl" + " --episodes " + ws / "episodes.jsonl" +
                            " --dim 16 --steps 12 --seed 3 --threads 1 --log " + ws / "train_log.jsonl" +
                            " --output ";
  REQUIRE(run(train + ws / "model", log) == 0);
  CHECK(fs::exists(ws.path("model/manifest.json")));
  CHECK(fs::exists(ws.path("model/params.bin")));
  CHECK(fs::exists(ws.path("model/vocab.txt")));
  CHECK(fs::file_size(ws.path("train_log.jsonl")) > 0);
  const auto train_cfg = json::parse(slurp(ws.path("model.config.json")));
  CHECK(train_cfg.at("config").at("trainer").at("batch_size") == 4);  // from the file
  CHECK(train_cfg.at("config").at("trainer").at("max_steps") == 12);  // from the flag
  CHECK(train_cfg.at("config").at("policy").at("dim") == 16);

  // Same seed, same checkpoint bytes.
  REQUIRE(run(train + ws / "model2", log) == 0);
  CHECK(slurp(ws.path("model/params.bin")) == slurp(ws.path("model2/params.bin")));
  CHECK(slurp(ws.path("model/manifest.json")) == slurp(ws.path("model2/manifest.json")));

  const std::string summarize =
      "summarize --checkpoint " + ws / "model" + " --input " + ws / "test.jsonl" + " --p-thres 0.5 --output ";
  REQUIRE(run(summarize + ws / "s1.jsonl", log) == 0);
  REQUIRE(run(summarize + ws / "s2.jsonl" + " --threads 2", log) == 0);
  const auto s1 = slurp(ws.path("s1.jsonl"));
  CHECK(s1 == slurp(ws.path("s2.jsonl")));
  std::istringstream lines(s1);
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const auto rec = json::parse(line);
    CHECK(rec.contains("id"));
    CHECK(rec.contains("summary"));
    CHECK_FALSE(rec.contains("ms"));
    ++count;
  }
  CHECK(count == 4);
  REQUIRE(run(summarize + ws / "s3.jsonl" + " --timing", log) == 0);
  CHECK(slurp(ws.path("s3.jsonl")).find("\"ms\"") != std::string::npos);

  REQUIRE(run("evaluate --checkpoint " + ws / "model" + " --input " + ws / "test.jsonl" + " --output " +
                  ws / "report.json",
              log) == 0);
  CHECK(slurp(log).find("R-1") != std::string::npos);
  const auto report = json::parse(slurp(ws.path("report.json")));
  for (const char* k : {"documents", "rouge1", "rouge2", "rougeL", "reward", "mean_sentences", "mean_words"}) {
    CHECK(report.contains(k));
  }
  CHECK(report.at("documents") == 4);

  REQUIRE(run("sweep --checkpoint " + ws / "model" + " --valid " + ws / "valid.jsonl" + " --output " +
                  ws / "sweep.json",
              log) == 0);
  CHECK(json::parse(slurp(ws.path("sweep.json"))).at("scores").size() == 10);

  REQUIRE(run("redundant --input " + ws / "test.jsonl" + " --checkpoint " + ws / "model" + " --output " +
                  ws / "red.jsonl",
              log) == 0);
  CHECK(slurp(log).find("duplicate percentage") != std::string::npos);
  const auto red = load_dataset(ws.path("red.jsonl"), CorpusConfig{});
  REQUIRE(red.documents.size() == 4);
  CHECK(red.documents[0].sentences.size() == 12);

  REQUIRE(run("trace --checkpoint " + ws / "model" + " --input " + ws / "red.jsonl" + " --index 1 --output " +
                  ws / "trace.csv",
              log) == 0);
  CHECK(slurp(ws.path("trace.csv")).rfind("step,p_stop,0,1,", 0) == 0);
  CHECK(run("trace --checkpoint " + ws / "model" + " --input " + ws / "red.jsonl" + " --doc-id none", log) == 2);
}

TEST_CASE("human-stats aggregates an event log") {
  Workspace ws;
  const auto log = ws.path("out.txt");
  const auto events = ws.path("events.jsonl");
  SyntheticCorpusConfig sc;
  sc.documents = 8;
  sc.sentences = 5;
  const auto docs = synthetic_corpus(sc);
  evalsvc::ModelOutputs x{"left", {}}, y{"right", {}};
  for (const auto& d : docs) {
    x.summaries[d.id] = {d.raw_sentences[0]};
    y.summaries[d.id] = {d.raw_sentences[1], d.raw_sentences[2]};
  }
  {
    evalsvc::EvalStore store(events);
    const auto id = store.create_session(x, y, docs, 4, "run");
    while (const auto pair = store.next_pair(id, "e1")) {
      evalsvc::RankingRecord r;
      r.pair_id = pair->pair_id;
      r.evaluator = "e1";
      const bool x_on_a = pair->model_a == "left";
      for (auto& side : r.ranks) side = x_on_a ? evalsvc::SideRanks{1, 2} : evalsvc::SideRanks{2, 1};
      store.submit_ranking(id, r);
    }
  }
  const auto before = slurp(events);
  REQUIRE(run("human-stats --input \"" + events.string() + "\" --output " + ws / "stats.json", log) == 0);
  CHECK(slurp(events) == before);
  const auto stats = json::parse(slurp(ws.path("stats.json")));
  const auto& agg = stats.at("run");
  CHECK(agg.at("records") == 8);
  CHECK(agg.at("models").at(0).at("name") == "left");
  CHECK(agg.at("models").at(0).at("mean_rank").at("overall").get<double>() == doctest::Approx(1.0));
  CHECK(agg.at("significance").at("overall").at("p_value").get<double>() < 0.01);
  CHECK(run("human-stats --input \"" + events.string() + "\" --session nope", log) == 2);
}
