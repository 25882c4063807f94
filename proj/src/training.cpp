#include "memsum/training.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "memsum/config.hpp"
#include "memsum/errors.hpp"

namespace memsum {

using nlohmann::json;

void TrainerConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
  if (patience == 0) throw std::invalid_argument("patience must be at least 1");
  validation.validate();
}

template <typename T>
ad::Var episode_loss(ad::Graph<T>& g, const Policy<T>& policy, const EncodedDocument& doc, const Episode& episode) {
  const PolicyConfig& pc = policy.config();
  const DocumentStates states = policy.encode(g, doc);
  auto state = ExtractionState::initial(states.sentences);
  for (std::size_t a : episode.indices) {
    if (a >= doc.valid_sentences()) {
      throw std::logic_error("episode index " + std::to_string(a) + " outside the encoded document");
    }
  }

  std::vector<ad::Var> terms;
  if (pc.variant == Variant::no_ehe) {
    // h is identically zero, so one scoring pass serves every step.
    const StepOutput out = policy.step(g, states, state);
    for (std::size_t a : episode.indices) {
      // Rows of `out` are sentence indices; sample without replacement.
      terms.push_back(g.sub(g.log_sigmoid(g.element(out.score_logits, a, 0)),
                            g.log(g.sum(g.gather_rows(out.scores, state.remaining)))));
      state.select(a);
    }
  } else {
    for (std::size_t a : episode.indices) {
      const StepOutput out = policy.step(g, states, state);
      terms.push_back(policy.action_log_prob(g, out, Action::select(a)));
      state.select(a);
    }
    if (states.stop_sentence) {
      const StepOutput out = policy.step(g, states, state);
      terms.push_back(policy.action_log_prob(g, out, Action::select(*states.stop_sentence)));
    } else if (pc.has_stop_head() && !state.remaining.empty()) {
      const StepOutput out = policy.step(g, states, state);
      terms.push_back(policy.action_log_prob(g, out, Action::stop_action()));
    }
  }
  if (terms.empty()) return g.scalar(T{0});
  ad::Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i]);
  const double ret = episode.reward / static_cast<double>(episode.indices.size() + 1);
  return g.scale(total, static_cast<T>(-ret));
}

template <typename T>
StepStats train_step(Policy<T>& policy, ad::AdamState<T>& adam, std::span<const BatchItem> batch,
                     std::uint64_t dropout_seed) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  auto& store = policy.parameters();
  store.zero_grad();
  StepStats stats;
  const T inv = static_cast<T>(1.0 / static_cast<double>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ad::Graph<T> g(true, true, ad::fnv1a(std::to_string(i), dropout_seed));
    const ad::Var loss = episode_loss(g, policy, *batch[i].encoded, batch[i].episode);
    g.backward(g.scale(loss, inv));
    stats.loss += static_cast<double>(g.item(loss));
    stats.mean_reward += batch[i].episode.reward;
    stats.mean_length += static_cast<double>(batch[i].episode.indices.size());
  }
  const double n = static_cast<double>(batch.size());
  stats.loss /= n;
  stats.mean_reward /= n;
  stats.mean_length /= n;
  ad::adam_step(store, adam);
  stats.step = store.step();
  return stats;
}

template <typename T>
double validate(const Policy<T>& policy, std::span<const Document> docs, const Vocabulary& vocab,
                const CorpusConfig& corpus, const InferenceConfig& config, std::size_t threads) {
  if (docs.empty()) throw std::invalid_argument("validate: empty validation set");
  return evaluate_dataset(policy, docs, vocab, corpus, config, threads).reward;
}

bool EarlyStopping::observe(double score) {
  if (!seen_ || score > best_) {
    seen_ = true;
    best_ = score;
    bad_rounds_ = 0;
    return true;
  }
  ++bad_rounds_;
  return false;
}

std::vector<TrainingExample> prepare_examples(std::span<const Document> docs,
                                              std::span<const std::vector<Episode>> episodes,
                                              const Vocabulary& vocab, const CorpusConfig& corpus) {
  if (docs.size() != episodes.size()) throw std::invalid_argument("prepare_examples: one episode set per document");
  std::vector<TrainingExample> out(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    out[i].doc = &docs[i];
    out[i].encoded = encode_document(docs[i], vocab, corpus);
    out[i].episodes = drop_out_of_range(episodes[i], out[i].encoded.valid_sentences());
  }
  return out;
}

template <typename T>
TrainingStats train(Policy<T>& policy, ad::AdamState<T>& adam, std::span<const TrainingExample> examples,
                    std::span<const Document> validation_docs, const Vocabulary& vocab, const CorpusConfig& corpus,
                    const TrainerConfig& config, const std::function<void(const json&)>& log) {
  config.validate();
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!examples[i].episodes.empty()) usable.push_back(i);
  }
  const std::size_t skipped = examples.size() - usable.size();
  if (usable.empty()) throw std::invalid_argument("train: no document has a usable episode");

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order = usable;
  std::size_t cursor = order.size();
  TrainingStats stats;
  EarlyStopping stopper(config.patience);
  std::vector<ad::Matrix<T>> snapshot;
  auto& store = policy.parameters();
  const auto grid = default_threshold_grid();

  for (std::size_t it = 0; it < config.max_steps; ++it) {
    std::vector<BatchItem> batch;
    while (batch.size() < config.batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& ex = examples[order[cursor++]];
      batch.push_back({&ex.encoded, sample_training_episode(ex.episodes, rng)});
    }
    StepStats s = train_step(policy, adam, std::span<const BatchItem>(batch), config.seed * 1000003 + it);
    s.skipped = skipped;
    stats.steps.push_back(s);
    if (log) {
      log(json{{"event", "step"}, {"step", s.step}, {"loss", s.loss}, {"mean_reward", s.mean_reward},
               {"mean_length", s.mean_length}, {"skipped", s.skipped}});
    }

    if (config.validation_interval == 0 || validation_docs.empty() || (it + 1) % config.validation_interval != 0) {
      continue;
    }
    ValidationPoint vp{store.step(), 0.0, config.validation.p_thres};
    if (config.sweep_validation) {
      const auto sweep = sweep_threshold(policy, validation_docs, vocab, corpus, grid,
                                         config.validation.max_sentences, config.threads);
      vp.score = sweep.best_score;
      vp.p_thres = sweep.best_threshold;
    } else {
      vp.score = validate(policy, validation_docs, vocab, corpus, config.validation, config.threads);
    }
    stats.validations.push_back(vp);
    if (stopper.observe(vp.score)) {
      stats.best = vp;
      snapshot.clear();
      for (const auto& p : store.all()) snapshot.push_back(p->value);
    }
    if (log) {
      log(json{{"event", "validation"}, {"step", vp.step}, {"score", vp.score}, {"p_thres", vp.p_thres},
               {"best", stats.best ? stats.best->score : vp.score}});
    }
    if (stopper.should_stop()) {
      stats.stopped_early = true;
      break;
    }
  }
  if (!snapshot.empty()) {
    for (std::size_t i = 0; i < snapshot.size(); ++i) store.all()[i]->value = snapshot[i];
  }
  return stats;
}

std::function<void(const json&)> jsonl_logger(const std::filesystem::path& path) {
  auto os = std::make_shared<std::ofstream>(path, std::ios::app);
  if (!*os) throw IoError("cannot open training log " + path.string());
  return [os](const json& j) { *os << j.dump() << '\n' << std::flush; };
}

// Checkpoints

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are written in host byte order");

namespace {

template <typename T>
void write_values(std::ostream& os, const ad::Matrix<T>& m) {
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(T)));
}

template <typename T>
void read_values(std::istream& is, ad::Matrix<T>& m) {
  is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(T)));
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw CheckpointError("missing " + path.filename().string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw CheckpointError("manifest.json is not valid JSON: " + std::string(e.what()));
  }
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const Policy<T>& policy, const ad::AdamState<T>* adam,
                     const Vocabulary& vocab, const CorpusConfig& corpus, const json& extra_config) {
  std::filesystem::create_directories(dir);
  const auto& store = policy.parameters();
  json config = extra_config.is_object() ? extra_config : json::object();
  config["policy"] = policy.config();
  config["corpus"] = corpus;
  json tensors = json::array();
  for (const auto& p : store.all()) {
    tensors.push_back({{"name", p->name}, {"shape", {p->value.rows(), p->value.cols()}}, {"trainable", p->trainable}});
  }
  json manifest{{"format", "memsum-checkpoint"},
                {"version", kCheckpointVersion},
                {"precision", std::string(ad::to_string(ad::precision_of<T>()))},
                {"seed", store.seed()},
                {"step", store.step()},
                {"config", config},
                {"tensors", tensors},
                {"optimizer", {{"adam", adam ? adam->config : ad::AdamConfig{}}, {"moments", adam != nullptr}}}};
  {
    std::ofstream os(dir / "manifest.json");
    if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
    os << manifest.dump(2) << '\n';
  }
  {
    std::ofstream os(dir / "params.bin", std::ios::binary);
    if (!os) throw IoError("cannot write " + (dir / "params.bin").string());
    for (const auto& p : store.all()) write_values(os, p->value);
    if (adam) {
      for (const auto* moments : {&adam->first_moment, &adam->second_moment}) {
        for (const auto& p : store.all()) {
          if (!p->trainable) continue;
          auto it = moments->find(p->name);
          write_values(os, it != moments->end() ? it->second : ad::Matrix<T>(p->value.rows(), p->value.cols()));
        }
      }
    }
  }
  std::ofstream os(dir / "vocab.txt");
  if (!os) throw IoError("cannot write " + (dir / "vocab.txt").string());
  for (const auto& t : vocab.tokens()) os << t << '\n';
}

template <typename T>
LoadedModel<T> load_checkpoint(const std::filesystem::path& dir) {
  const json manifest = read_json_file(dir / "manifest.json");
  if (manifest.value("format", std::string{}) != "memsum-checkpoint") {
    throw CheckpointError("manifest field 'format' is not memsum-checkpoint");
  }
  if (!manifest.contains("version") || manifest["version"] != kCheckpointVersion) {
    throw CheckpointError("manifest field 'version' unsupported: " + manifest.value("version", json()).dump());
  }
  const auto precision = ad::parse_precision(manifest.at("precision").get<std::string>());
  if (precision != ad::precision_of<T>()) {
    throw CheckpointError("manifest field 'precision' is " + std::string(ad::to_string(precision)) +
                          ", expected " + std::string(ad::to_string(ad::precision_of<T>())));
  }

  LoadedModel<T> model;
  model.config = manifest.at("config");
  PolicyConfig pc;
  from_json(model.config.at("policy"), pc);
  from_json(model.config.at("corpus"), model.corpus);

  std::ifstream vs(dir / "vocab.txt");
  if (!vs) throw CheckpointError("missing vocab.txt");
  std::vector<std::string> tokens;
  for (std::string line; std::getline(vs, line);) tokens.push_back(line);
  if (tokens.size() < 2) throw CheckpointError("vocab.txt lacks the reserved PAD and UNK entries");
  model.vocab = Vocabulary(tokens[0], tokens[1]);
  for (std::size_t i = 2; i < tokens.size(); ++i) model.vocab.add(tokens[i]);

  const json& tensors = manifest.at("tensors");
  bool embedding_trainable = false;
  for (const auto& t : tensors) {
    if (t.at("name") == "embedding") embedding_trainable = t.at("trainable").get<bool>();
  }
  EmbeddingTable placeholder{ad::Matrix<double>(model.vocab.size(), pc.dim), embedding_trainable};
  model.policy = std::make_unique<Policy<T>>(pc, placeholder, manifest.value("seed", std::uint64_t{0}));
  auto& store = model.policy->parameters();
  const auto& params = store.all();
  if (tensors.size() != params.size()) {
    throw CheckpointError("manifest field 'tensors' lists " + std::to_string(tensors.size()) +
                          " tensors, the configured policy has " + std::to_string(params.size()));
  }
  std::size_t expected = 0, trainable_elements = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    const auto& p = *params[i];
    const auto name = t.at("name").get<std::string>();
    if (name != p.name) throw CheckpointError("tensor " + std::to_string(i) + " is '" + name + "', expected '" + p.name + "'");
    const auto shape = t.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols()) {
      throw CheckpointError("shape mismatch for tensor '" + name + "': manifest " + t.at("shape").dump() +
                            ", policy [" + std::to_string(p.value.rows()) + "," + std::to_string(p.value.cols()) + "]");
    }
    expected += p.value.size();
    if (p.trainable) trainable_elements += p.value.size();
  }
  const bool moments = manifest.at("optimizer").value("moments", false);
  if (moments) expected += 2 * trainable_elements;
  from_json(manifest.at("optimizer").at("adam"), model.adam.config);

  const auto blob = dir / "params.bin";
  if (!std::filesystem::exists(blob)) throw CheckpointError("missing params.bin");
  const auto bytes = std::filesystem::file_size(blob);
  if (bytes != expected * sizeof(T)) {
    throw CheckpointError("params.bin has " + std::to_string(bytes) + " bytes, expected " +
                          std::to_string(expected * sizeof(T)) + (bytes < expected * sizeof(T) ? " (truncated)" : ""));
  }
  std::ifstream is(blob, std::ios::binary);
  for (const auto& p : params) read_values(is, p->value);
  if (moments) {
    for (auto* target : {&model.adam.first_moment, &model.adam.second_moment}) {
      for (const auto& p : params) {
        if (!p->trainable) continue;
        ad::Matrix<T> m(p->value.rows(), p->value.cols());
        read_values(is, m);
        (*target)[p->name] = std::move(m);
      }
    }
  }
  if (!is) throw CheckpointError("params.bin could not be read");
  store.set_step(manifest.at("step").get<std::uint64_t>());
  return model;
}

#define MEMSUM_INSTANTIATE(T)                                                                                 \
  template ad::Var episode_loss<T>(ad::Graph<T>&, const Policy<T>&, const EncodedDocument&, const Episode&);   \
  template StepStats train_step<T>(Policy<T>&, ad::AdamState<T>&, std::span<const BatchItem>, std::uint64_t);  \
  template double validate<T>(const Policy<T>&, std::span<const Document>, const Vocabulary&,                  \
                              const CorpusConfig&, const InferenceConfig&, std::size_t);                       \
  template TrainingStats train<T>(Policy<T>&, ad::AdamState<T>&, std::span<const TrainingExample>,            \
                                  std::span<const Document>, const Vocabulary&, const CorpusConfig&,          \
                                  const TrainerConfig&, const std::function<void(const json&)>&);             \
  template void save_checkpoint<T>(const std::filesystem::path&, const Policy<T>&, const ad::AdamState<T>*,    \
                                   const Vocabulary&, const CorpusConfig&, const json&);                       \
  template LoadedModel<T> load_checkpoint<T>(const std::filesystem::path&);
MEMSUM_INSTANTIATE(float)
MEMSUM_INSTANTIATE(double)
#undef MEMSUM_INSTANTIATE

}  // namespace memsum
