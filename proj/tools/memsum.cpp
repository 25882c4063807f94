// Command-line entry point: oracle, train, summarize, evaluate, sweep,
// redundant, trace, eval-serve and human-stats.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "memsum/config.hpp"
#include "memsum/errors.hpp"
#include "memsum/evalsvc.hpp"
#include "memsum/evalsvc_http.hpp"
#include "memsum/experiments.hpp"
#include "memsum/inference.hpp"
#include "memsum/oracle.hpp"
#include "memsum/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace memsum;

namespace {

struct Settings {
  CorpusConfig corpus;
  PolicyConfig policy;
  OracleConfig oracle;
  InferenceConfig inference;
  TrainerConfig trainer;
};

json to_json(const Settings& s) {
  return {{"corpus", s.corpus},
          {"policy", s.policy},
          {"oracle", s.oracle},
          {"inference", s.inference},
          {"trainer", s.trainer}};
}

void overlay_file(Settings& s, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config file is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw std::invalid_argument("config file must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "corpus") {
      from_json(value, s.corpus);
    } else if (key == "policy") {
      from_json(value, s.policy);
    } else if (key == "oracle") {
      from_json(value, s.oracle);
    } else if (key == "inference") {
      from_json(value, s.inference);
    } else if (key == "trainer") {
      from_json(value, s.trainer);
    } else {
      throw std::invalid_argument("unknown config section '" + key + "'");
    }
  }
}

/// Prints the resolved settings to stderr and, when an output path is given,
/// writes them next to it as <output>.config.json.
void echo_config(const std::string& command, const json& resolved, const std::string& output) {
  const json record = {{"command", command}, {"config", resolved}};
  std::cerr << "resolved config: " << record.dump() << '\n';
  if (output.empty()) return;
  fs::path out(output);
  while (!out.empty() && !out.has_filename()) out = out.parent_path();
  const fs::path sidecar = out.string() + ".config.json";
  std::ofstream os(sidecar);
  if (!os) throw IoError("cannot write " + sidecar.string());
  os << record.dump(2) << '\n';
}

/// Loads documents; unlabeled records are kept when `require_summary` is false.
std::vector<Document> load_documents(const fs::path& path, const CorpusConfig& corpus, bool require_summary) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::vector<Document> docs;
  std::size_t line_number = 0, skipped = 0, malformed = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Document doc;
    try {
      const bool complete = parse_document_record(line, line_number, corpus, doc);
      if (complete || (!require_summary && !doc.sentences.empty())) {
        docs.push_back(std::move(doc));
      } else {
        ++skipped;
      }
    } catch (const FormatError& e) {
      ++malformed;
      std::cerr << "warning: " << path.string() << ": " << e.what() << '\n';
    }
  }
  if (skipped + malformed > 0) {
    std::cerr << "loaded " << docs.size() << " documents from " << path.string() << " (" << skipped << " empty, "
              << malformed << " malformed)\n";
  }
  if (docs.empty()) throw std::runtime_error("no usable documents in " + path.string());
  return docs;
}

std::size_t resolve_threads(std::size_t threads) {
  return threads == 0 ? std::max<std::size_t>(1, std::thread::hardware_concurrency()) : threads;
}

std::vector<std::vector<Episode>> episodes_for(const std::vector<Document>& docs, const OracleConfig& oracle,
                                               std::size_t threads) {
  std::vector<std::vector<Episode>> out(docs.size());
  parallel_for(docs.size(), threads, [&](std::size_t i) { out[i] = build_episode_set(docs[i], oracle); });
  return out;
}

LoadedModel<float> open_checkpoint(const std::string& dir) {
  if (dir.empty()) throw std::invalid_argument("--checkpoint is required");
  return load_checkpoint<float>(dir);
}

void print_report(std::ostream& os, const EvaluationReport& r) {
  os << std::fixed << std::setprecision(2) << "documents " << r.documents << "  R-1 " << 100.0 * r.rouge1 << "  R-2 "
     << 100.0 * r.rouge2 << "  R-L " << 100.0 * r.rouge_l << "  reward " << std::setprecision(4) << r.reward
     << "  sentences " << std::setprecision(2) << r.mean_sentences << "  words " << r.mean_words << "  ms "
     << r.mean_ms << '\n';
}

json report_json(const EvaluationReport& r, bool timing) {
  json j = {{"documents", r.documents},
            {"rouge1", r.rouge1},
            {"rouge2", r.rouge2},
            {"rougeL", r.rouge_l},
            {"reward", r.reward},
            {"mean_sentences", r.mean_sentences},
            {"mean_words", r.mean_words}};
  if (timing) j["mean_ms"] = r.mean_ms;
  return j;
}

EmbeddingTable embeddings_of(const Policy<float>& policy) {
  const auto& m = policy.parameters().get("embedding").value;
  EmbeddingTable t;
  t.matrix = ad::Matrix<double>(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) t.matrix(r, c) = m(r, c);
  }
  return t;
}

std::atomic<evalsvc::EvalServer*> g_server{nullptr};

extern "C" void handle_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Extractive summarization with a multi-step extraction policy"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Settings settings;
  std::string config_file, input, output, checkpoint, valid, episodes_file, embeddings_file, log_file, session_id,
      doc_id, host = "127.0.0.1";
  double p_thres = 0.0;
  std::size_t nmax = 0, branch = 0, beam_cap = 0, threads = 0, fixed_k = 0, dim = 0, steps = 0, batch = 0,
              min_count = 1, doc_index = 0;
  std::uint64_t seed = 0;
  double lr = 0.0;
  int port = 8080;
  std::string variant;
  bool timing = false, block_trigrams = false, unbounded_beam = false;

  auto common = [&](CLI::App* sub, bool with_output = true) {
    sub->add_option("--config", config_file, "JSON config overlay (sections: corpus, policy, oracle, inference, trainer)")
        ->check(CLI::ExistingFile);
    sub->add_option("--threads", threads, "Worker threads (default: available cores)");
    sub->add_option("--seed", seed, "Random seed");
    if (with_output) sub->add_option("--output", output, "Output path");
  };
  auto inference_flags = [&](CLI::App* sub) {
    sub->add_option("--p-thres", p_thres, "Stop when p_stop reaches this threshold")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--nmax", nmax, "Maximum extracted sentences")->check(CLI::PositiveNumber);
    sub->add_flag("--block-trigrams", block_trigrams, "Skip candidates sharing a trigram with the summary");
  };

  auto* oracle = app.add_subcommand("oracle", "Build high-ROUGE episode sets and write the episode cache");
  common(oracle);
  oracle->add_option("--input", input, "Dataset (JSON Lines)")->required()->check(CLI::ExistingFile);
  oracle->add_option("--branch", branch, "Branching factor B")->check(CLI::PositiveNumber);
  oracle->add_option("--nmax", nmax, "Maximum sentences per episode")->check(CLI::PositiveNumber);
  oracle->add_option("--beam-cap", beam_cap, "Partial summaries kept per depth")->check(CLI::PositiveNumber);
  oracle->add_flag("--unbounded-beam", unbounded_beam, "Keep every partial summary");

  auto* train = app.add_subcommand("train", "Train a policy and save a checkpoint directory");
  common(train);
  train->add_option("--input", input, "Training dataset (JSON Lines)")->required()->check(CLI::ExistingFile);
  train->add_option("--valid", valid, "Validation dataset (JSON Lines)")->check(CLI::ExistingFile);
  train->add_option("--episodes", episodes_file, "Episode cache from 'oracle' (built on the fly when absent)")
      ->check(CLI::ExistingFile);
  train->add_option("--embeddings", embeddings_file, "GloVe-format word vectors")->check(CLI::ExistingFile);
  train->add_option("--min-count", min_count, "Minimum token count for the vocabulary");
  train->add_option("--dim", dim, "Embedding and model dimension")->check(CLI::PositiveNumber);
  train->add_option("--variant", variant, "full, no_lse, no_gce, no_ehe, gru_ehe, no_auto_stop[:K], stop_sentence");
  train->add_option("--fixed-k", fixed_k, "Sentence count for no_auto_stop")->check(CLI::PositiveNumber);
  train->add_option("--steps", steps, "Maximum optimizer steps")->check(CLI::PositiveNumber);
  train->add_option("--batch", batch, "Episodes per optimizer step")->check(CLI::PositiveNumber);
  train->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
  train->add_option("--branch", branch, "Oracle branching factor when building episodes")->check(CLI::PositiveNumber);
  train->add_option("--beam-cap", beam_cap, "Oracle beam cap when building episodes")->check(CLI::PositiveNumber);
  train->add_option("--nmax", nmax, "Maximum sentences per episode and at validation")->check(CLI::PositiveNumber);
  train->add_option("--log", log_file, "Training log (JSON Lines)");

  auto* summarize = app.add_subcommand("summarize", "Extract summaries with a checkpoint");
  common(summarize);
  summarize->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  summarize->add_option("--input", input, "Documents (JSON Lines)")->required()->check(CLI::ExistingFile);
  inference_flags(summarize);
  summarize->add_flag("--timing", timing, "Include per-document milliseconds in the output");

  auto* evaluate = app.add_subcommand("evaluate", "Score extracted summaries against the gold summaries");
  common(evaluate);
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  evaluate->add_option("--input", input, "Labeled documents (JSON Lines)")->required()->check(CLI::ExistingFile);
  inference_flags(evaluate);
  evaluate->add_flag("--timing", timing, "Include mean milliseconds in the JSON report");

  auto* sweep = app.add_subcommand("sweep", "Score the stop-threshold grid 0.1..1.0 on validation documents");
  common(sweep);
  sweep->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  sweep->add_option("--valid", valid, "Validation documents (JSON Lines)")->required()->check(CLI::ExistingFile);
  sweep->add_option("--nmax", nmax, "Maximum extracted sentences")->check(CLI::PositiveNumber);

  auto* redundant = app.add_subcommand("redundant", "Write the sentence-duplicated dataset, optionally scoring a model");
  common(redundant);
  redundant->add_option("--input", input, "Dataset (JSON Lines)")->required()->check(CLI::ExistingFile);
  redundant->add_option("--checkpoint", checkpoint, "Report duplicate percentage for this checkpoint");
  inference_flags(redundant);

  auto* trace = app.add_subcommand("trace", "Write per-step sentence scores for one document as CSV");
  common(trace);
  trace->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  trace->add_option("--input", input, "Documents (JSON Lines)")->required()->check(CLI::ExistingFile);
  auto* id_opt = trace->add_option("--doc-id", doc_id, "Document id");
  trace->add_option("--index", doc_index, "Document position in the input")->excludes(id_opt);
  inference_flags(trace);

  auto* serve = app.add_subcommand("eval-serve", "Serve the pairwise human-evaluation API");
  common(serve, false);
  serve->add_option("--port", port, "TCP port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--log", log_file, "Event log (JSON Lines), replayed on start")->required();
  serve->add_option("--input", input, "Source documents for sessions and /document (JSON Lines)")
      ->check(CLI::ExistingFile);
  serve->add_option("--checkpoint", checkpoint, "Checkpoint whose vocabulary and embeddings drive highlighting");
  serve->add_option("--embeddings", embeddings_file, "GloVe-format vectors for highlighting")
      ->check(CLI::ExistingFile);
  serve->add_option("--dim", dim, "Dimension of --embeddings")->check(CLI::PositiveNumber);

  auto* stats = app.add_subcommand("human-stats", "Aggregate rankings from an evaluation event log");
  common(stats);
  stats->add_option("--input", input, "Event log (JSON Lines)")->required()->check(CLI::ExistingFile);
  stats->add_option("--session", session_id, "Session id (default: every session)");

  for (auto* sub : {oracle, train, summarize, redundant}) sub->get_option("--output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  CLI::App* active = app.get_subcommands().front();
  std::size_t workers = 1;
  try {
    if (!config_file.empty()) overlay_file(settings, config_file);
    auto flag = [&](const char* name) {
      const auto* opt = active->get_option_no_throw(name);
      return opt != nullptr && opt->count() > 0;
    };

    if (flag("--seed")) {
      settings.trainer.seed = seed;
    }
    if (flag("--threads")) settings.trainer.threads = threads;
    workers = resolve_threads(settings.trainer.threads);
    if (flag("--p-thres")) settings.inference.p_thres = p_thres;
    if (flag("--nmax")) {
      settings.inference.max_sentences = nmax;
      settings.oracle.max_sentences = nmax;
      settings.trainer.validation.max_sentences = nmax;
    }
    if (flag("--block-trigrams")) settings.inference.block_trigrams = true;
    if (flag("--branch")) settings.oracle.branching = branch;
    if (flag("--beam-cap")) settings.oracle.beam_cap = beam_cap;
    if (flag("--unbounded-beam")) settings.oracle.beam_cap = OracleConfig::kUnbounded;
    if (flag("--dim")) settings.policy.dim = dim;
    if (flag("--variant")) {
      const auto spec = parse_variant_spec(variant);
      settings.policy.variant = spec.variant;
      if (spec.variant == Variant::no_auto_stop && variant.find(':') != std::string::npos) {
        settings.policy.fixed_k = spec.fixed_k;
      }
    }
    if (flag("--fixed-k")) settings.policy.fixed_k = fixed_k;
    if (flag("--steps")) settings.trainer.max_steps = steps;
    if (flag("--batch")) settings.trainer.batch_size = batch;
    if (flag("--lr")) settings.trainer.adam.learning_rate = lr;
    settings.corpus.validate();
    settings.oracle.validate();
    settings.inference.validate();
    settings.trainer.validate();
    if (active == train) settings.policy.validate();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    const std::string name = active->get_name();

    if (active == oracle) {
      echo_config(name, {{"corpus", settings.corpus}, {"oracle", settings.oracle}}, output);
      const auto docs = load_documents(input, settings.corpus, true);
      const auto sets = episodes_for(docs, settings.oracle, workers);
      std::vector<EpisodeCacheRecord> records;
      std::size_t total = 0;
      for (std::size_t i = 0; i < docs.size(); ++i) {
        records.push_back({docs[i].id, sets[i]});
        total += sets[i].size();
      }
      write_episode_cache(output, records);
      std::cout << "wrote " << total << " episodes for " << docs.size() << " documents to " << output << '\n';
      return 0;
    }

    if (active == train) {
      const json resolved = to_json(settings);
      echo_config(name, resolved, output);
      const auto docs = load_documents(input, settings.corpus, true);
      std::vector<Document> valid_docs;
      if (!valid.empty()) valid_docs = load_documents(valid, settings.corpus, true);

      std::vector<std::vector<Episode>> sets;
      if (!episodes_file.empty()) {
        std::map<std::string, std::vector<Episode>> by_id;
        for (auto& rec : read_episode_cache(episodes_file)) by_id[rec.id] = std::move(rec.episodes);
        for (const auto& d : docs) {
          const auto it = by_id.find(d.id);
          sets.push_back(it == by_id.end() ? std::vector<Episode>{} : it->second);
        }
      } else {
        sets = episodes_for(docs, settings.oracle, workers);
      }

      const auto vocab = build_vocabulary(docs, min_count, settings.corpus);
      const auto emb = embeddings_file.empty()
                           ? random_embedding_table(vocab, settings.policy.dim, settings.trainer.seed)
                           : load_embedding_table(embeddings_file, vocab, settings.policy.dim, settings.trainer.seed);
      Policy<float> policy(settings.policy, emb, settings.trainer.seed);
      ad::AdamState<float> adam;
      adam.config = settings.trainer.adam;
      const auto examples = prepare_examples(docs, sets, vocab, settings.corpus);
      std::function<void(const json&)> logger;
      if (!log_file.empty()) {
        fs::remove(log_file);
        logger = jsonl_logger(log_file);
      }
      auto trainer = settings.trainer;
      trainer.threads = workers;
      const auto result = memsum::train<float>(policy, adam, examples, valid_docs, vocab, settings.corpus, trainer,
                                               logger);
      save_checkpoint<float>(output, policy, &adam, vocab, settings.corpus, resolved);
      std::cout << "trained " << result.steps.size() << " steps";
      if (result.best) {
        std::cout << "; best validation " << result.best->score << " at step " << result.best->step
                  << " (p_thres " << result.best->p_thres << ")";
      }
      std::cout << "; checkpoint " << output << '\n';
      return 0;
    }

    if (active == summarize || active == evaluate) {
      auto model = open_checkpoint(checkpoint);
      echo_config(name, {{"checkpoint", checkpoint}, {"inference", settings.inference}, {"model", model.config}},
                  output);
      const auto docs = load_documents(input, model.corpus, active == evaluate);
      const auto report =
          evaluate_dataset(*model.policy, docs, model.vocab, model.corpus, settings.inference, workers);
      if (active == summarize) {
          write_results(output, report.results, timing);
        std::cout << "wrote " << report.results.size() << " summaries to " << output << '\n';
      } else {
        print_report(std::cout, report);
        if (!output.empty()) {
          std::ofstream os(output);
          if (!os) throw IoError("cannot write " + output);
          os << report_json(report, timing).dump(2) << '\n';
        }
      }
      return 0;
    }

    if (active == sweep) {
      auto model = open_checkpoint(checkpoint);
      echo_config(name, {{"checkpoint", checkpoint}, {"max_sentences", settings.inference.max_sentences}}, output);
      const auto docs = load_documents(valid, model.corpus, true);
      const auto grid = default_threshold_grid();
      const auto r = sweep_threshold(*model.policy, docs, model.vocab, model.corpus, grid,
                                     settings.inference.max_sentences, workers);
      std::cout << "p_thres  score\n";
      json table = json::array();
      for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
        std::cout << std::fixed << std::setprecision(1) << r.thresholds[i] << "      " << std::setprecision(4)
                  << r.scores[i] << '\n';
        table.push_back({{"p_thres", r.thresholds[i]}, {"score", r.scores[i]}});
      }
      std::cout << "best p_thres " << std::setprecision(1) << r.best_threshold << " score " << std::setprecision(4)
                << r.best_score << '\n';
      if (!output.empty()) {
        std::ofstream os(output);
        if (!os) throw IoError("cannot write " + output);
        os << json{{"scores", table}, {"best_threshold", r.best_threshold}, {"best_score", r.best_score}}.dump(2)
           << '\n';
      }
      return 0;
    }

    if (active == redundant) {
      echo_config(name, {{"corpus", settings.corpus}, {"inference", settings.inference}}, output);
      const auto docs = load_documents(input, settings.corpus, false);
      const auto red = make_redundant_dataset(docs);
      write_dataset(output, red);
      std::cout << "wrote " << red.size() << " redundant documents to " << output << '\n';
      if (!checkpoint.empty()) {
        auto model = open_checkpoint(checkpoint);
        const auto report =
            evaluate_dataset(*model.policy, red, model.vocab, model.corpus, settings.inference, workers);
        double dup = 0.0;
        for (std::size_t i = 0; i < red.size(); ++i) dup += duplicate_percentage(report.results[i].indices, red[i]);
        dup /= static_cast<double>(red.size());
        print_report(std::cout, report);
        std::cout << "duplicate percentage " << std::fixed << std::setprecision(2) << dup << '\n';
      }
      return 0;
    }

    if (active == trace) {
      auto model = open_checkpoint(checkpoint);
      echo_config(name, {{"checkpoint", checkpoint}, {"inference", settings.inference}}, output);
      const auto docs = load_documents(input, model.corpus, false);
      const Document* doc = nullptr;
      if (!doc_id.empty()) {
        for (const auto& d : docs) {
          if (d.id == doc_id) doc = &d;
        }
        if (!doc) throw std::invalid_argument("no document with id '" + doc_id + "'");
      } else {
        if (doc_index >= docs.size()) throw std::invalid_argument("--index is past the end of the input");
        doc = &docs[doc_index];
      }
      const auto t = score_trace(*model.policy, *doc, encode_document(*doc, model.vocab, model.corpus),
                                 settings.inference);
      if (output.empty()) {
        write_score_trace_csv(std::cout, t);
      } else {
        std::ofstream os(output);
        if (!os) throw IoError("cannot write " + output);
        write_score_trace_csv(os, t);
      }
      return 0;
    }

    if (active == serve) {
      std::vector<Document> docs;
      if (!input.empty()) docs = load_documents(input, settings.corpus, false);
      Vocabulary vocab;
      EmbeddingTable emb;
      if (!checkpoint.empty()) {
        auto model = open_checkpoint(checkpoint);
        vocab = model.vocab;
        emb = embeddings_of(*model.policy);
      } else {
        vocab = build_vocabulary(docs, 1, settings.corpus);
        const std::size_t d = dim > 0 ? dim : settings.policy.dim;
        emb = embeddings_file.empty() ? random_embedding_table(vocab, d, settings.trainer.seed)
                                      : load_embedding_table(embeddings_file, vocab, d, settings.trainer.seed);
        if (embeddings_file.empty()) {
          std::cerr << "warning: no --checkpoint or --embeddings; highlighting uses random vectors\n";
        }
      }
      echo_config(name, {{"host", host}, {"port", port}, {"log", log_file}, {"documents", docs.size()}}, "");
      evalsvc::EvalStore store(fs::path{log_file});
      evalsvc::EvalServer server(store, std::move(vocab), std::move(emb), std::move(docs));
      const int bound = server.bind(host, port);
      if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
      std::cout << "listening on http://" << host << ':' << bound << std::endl;
      g_server = &server;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      server.serve();
      g_server = nullptr;
      return 0;
    }

    if (active == stats) {
      echo_config(name, {{"log", input}, {"session", session_id}}, output);
      evalsvc::EvalStore store(fs::path{input});
      json out = json::object();
      const auto ids = session_id.empty() ? store.sessions() : std::vector<std::string>{session_id};
      for (const auto& id : ids) out[id] = evalsvc::to_json(store.aggregate(id));
      if (output.empty()) {
        std::cout << out.dump(2) << '\n';
      } else {
        std::ofstream os(output);
        if (!os) throw IoError("cannot write " + output);
        os << out.dump(2) << '\n';
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
