#include "memsum/evalsvc.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <mutex>
#include <random>

#include "memsum/errors.hpp"

namespace memsum::evalsvc {

using nlohmann::json;

namespace {

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

std::string record_key(const std::string& pair_id, const std::string& evaluator) {
  return pair_id + '\n' + evaluator;
}

json pair_to_json(const SummaryPair& p) {
  json j = public_view(p);
  j["model_a"] = p.model_a;
  j["model_b"] = p.model_b;
  j["order_seed"] = p.order_seed;
  return j;
}

SummaryPair pair_from_json(const json& j) {
  SummaryPair p;
  p.pair_id = j.at("pair_id").get<std::string>();
  p.document_id = j.at("document_id").get<std::string>();
  p.reference = j.at("reference").get<std::vector<std::string>>();
  p.summary_a = j.at("summary_a").get<std::vector<std::string>>();
  p.summary_b = j.at("summary_b").get<std::vector<std::string>>();
  p.model_a = j.at("model_a").get<std::string>();
  p.model_b = j.at("model_b").get<std::string>();
  p.order_seed = j.at("order_seed").get<std::uint64_t>();
  return p;
}

std::vector<double> sentence_vector(std::string_view text, const Vocabulary& vocab, const EmbeddingTable& emb) {
  std::vector<double> v(emb.dim(), 0.0);
  std::string pad = vocab.token(Vocabulary::kPad);
  std::transform(pad.begin(), pad.end(), pad.begin(), [](unsigned char c) { return std::tolower(c); });
  std::size_t count = 0;
  for (const auto& token : tokenize(text)) {
    const std::size_t id = vocab.index(token);
    if (id == Vocabulary::kPad || token == pad || id >= emb.rows()) continue;
    for (std::size_t c = 0; c < v.size(); ++c) v[c] += emb.matrix(id, c);
    ++count;
  }
  if (count > 0) {
    for (auto& x : v) x /= static_cast<double>(count);
  }
  return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

std::size_t word_count(const std::vector<std::string>& sentences) {
  std::size_t n = 0;
  for (const auto& s : sentences) n += tokenize(s, false).size();
  return n;
}

json document_to_json(const Document& d) {
  return {{"id", d.id}, {"text", d.raw_sentences}, {"summary", d.raw_summary}};
}

Document document_from_json(const json& j) {
  Document d = make_document(j.at("id").get<std::string>(), j.at("text").get<std::vector<std::string>>(),
                             j.at("summary").get<std::vector<std::string>>());
  return d;
}

}  // namespace

json public_view(const SummaryPair& p) {
  return {{"pair_id", p.pair_id},
          {"document_id", p.document_id},
          {"reference", p.reference},
          {"summary_a", p.summary_a},
          {"summary_b", p.summary_b}};
}

void RankingRecord::validate() const {
  if (pair_id.empty()) throw ValidationError("pair_id is required");
  if (evaluator.empty()) throw ValidationError("evaluator is required");
  if (skipped) return;
  for (std::size_t c = 0; c < ranks.size(); ++c) {
    const auto [a, b] = ranks[c];
    const bool ok = (a == 1 && b == 2) || (a == 2 && b == 1) || (a == 1 && b == 1);
    if (!ok) {
      throw ValidationError(std::string("invalid ranks for criterion '") + kCriteria[c] + "': " + std::to_string(a) +
                            "," + std::to_string(b) + " (expected {1,2} or {1,1})");
    }
  }
}

json to_json(const RankingRecord& r) {
  json j = {{"pair_id", r.pair_id}, {"evaluator", r.evaluator}, {"skipped", r.skipped}, {"timestamp", r.timestamp}};
  if (!r.skipped) {
    json ranks = json::object();
    for (std::size_t c = 0; c < r.ranks.size(); ++c) ranks[kCriteria[c]] = {{"a", r.ranks[c].a}, {"b", r.ranks[c].b}};
    j["ranks"] = ranks;
  }
  return j;
}

RankingRecord ranking_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("ranking must be a JSON object");
  RankingRecord r;
  try {
    r.pair_id = j.value("pair_id", std::string{});
    r.evaluator = j.value("evaluator", std::string{});
    r.skipped = j.value("skipped", false);
    r.timestamp = j.value("timestamp", std::string{});
    const auto it = j.find("ranks");
    if (r.skipped) {
      if (it != j.end() && !it->is_null()) throw ValidationError("skipped records carry no ranks");
    } else {
      if (it == j.end() || !it->is_object()) throw ValidationError("ranks are required unless skipped");
      for (const auto& [key, value] : it->items()) {
        if (std::find_if(kCriteria.begin(), kCriteria.end(), [&](const char* c) { return key == c; }) ==
            kCriteria.end()) {
          throw ValidationError("unknown criterion '" + key + "'");
        }
      }
      for (std::size_t c = 0; c < kCriteria.size(); ++c) {
        const auto crit = it->find(kCriteria[c]);
        if (crit == it->end()) throw ValidationError(std::string("missing ranks for criterion '") + kCriteria[c] + "'");
        r.ranks[c].a = crit->at("a").get<int>();
        r.ranks[c].b = crit->at("b").get<int>();
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed ranking: ") + e.what());
  }
  r.validate();
  return r;
}

HighlightResult highlight(const SummaryPair& pair, std::string_view query, const Vocabulary& vocab,
                          const EmbeddingTable& embeddings) {
  if (tokenize(query).empty()) throw ValidationError("query is empty");
  const auto q = sentence_vector(query, vocab, embeddings);
  HighlightResult r;
  for (const auto& s : pair.summary_a) r.a.push_back(cosine(q, sentence_vector(s, vocab, embeddings)));
  for (const auto& s : pair.summary_b) r.b.push_back(cosine(q, sentence_vector(s, vocab, embeddings)));
  return r;
}

std::vector<SummaryPair> make_pairs(const ModelOutputs& x, const ModelOutputs& y, std::span<const Document> docs,
                                    std::uint64_t seed) {
  if (x.name.empty() || y.name.empty()) throw std::invalid_argument("model names are required");
  if (x.name == y.name) throw std::invalid_argument("the two models need distinct names");
  for (const auto& [id, s] : x.summaries) {
    if (!y.summaries.contains(id)) throw std::invalid_argument("document '" + id + "' missing from " + y.name);
  }
  for (const auto& [id, s] : y.summaries) {
    if (!x.summaries.contains(id)) throw std::invalid_argument("document '" + id + "' missing from " + x.name);
  }
  std::vector<SummaryPair> pairs;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::set<std::string> seen;
  for (const auto& doc : docs) {
    const auto it = x.summaries.find(doc.id);
    if (it == x.summaries.end() || !seen.insert(doc.id).second) continue;
    SummaryPair p;
    p.pair_id = "p" + std::to_string(pairs.size());
    p.document_id = doc.id;
    p.reference = doc.raw_summary;
    p.order_seed = seed;
    const bool x_first = coin(rng);
    const auto& ys = y.summaries.at(doc.id);
    p.summary_a = x_first ? it->second : ys;
    p.summary_b = x_first ? ys : it->second;
    p.model_a = x_first ? x.name : y.name;
    p.model_b = x_first ? y.name : x.name;
    pairs.push_back(std::move(p));
  }
  if (seen.size() != x.summaries.size()) {
    for (const auto& [id, s] : x.summaries) {
      if (!seen.contains(id)) throw std::invalid_argument("document '" + id + "' not found");
    }
  }
  return pairs;
}

Aggregate aggregate_rankings(const Session& session) {
  Aggregate a;
  a.models[0].name = session.model_x;
  a.models[1].name = session.model_y;
  std::map<std::string, const SummaryPair*> by_id;
  for (const auto& p : session.pairs) {
    by_id[p.pair_id] = &p;
    a.mapping.push_back({p.pair_id, p.model_a, p.model_b});
    const bool x_on_a = p.model_a == session.model_x;
    const auto& xs = x_on_a ? p.summary_a : p.summary_b;
    const auto& ys = x_on_a ? p.summary_b : p.summary_a;
    a.models[0].mean_sentences += static_cast<double>(xs.size());
    a.models[1].mean_sentences += static_cast<double>(ys.size());
    a.models[0].mean_words += static_cast<double>(word_count(xs));
    a.models[1].mean_words += static_cast<double>(word_count(ys));
  }
  if (!session.pairs.empty()) {
    for (auto& m : a.models) {
      m.mean_sentences /= static_cast<double>(session.pairs.size());
      m.mean_words /= static_cast<double>(session.pairs.size());
    }
  }
  std::array<std::vector<std::pair<double, double>>, 3> paired;
  for (const auto& [key, r] : session.records) {
    if (r.skipped) {
      ++a.skipped;
      continue;
    }
    const SummaryPair& p = *by_id.at(r.pair_id);
    const bool x_on_a = p.model_a == session.model_x;
    for (std::size_t c = 0; c < 3; ++c) {
      const double rx = x_on_a ? r.ranks[c].a : r.ranks[c].b;
      const double ry = x_on_a ? r.ranks[c].b : r.ranks[c].a;
      a.models[0].mean_rank[c] += rx;
      a.models[1].mean_rank[c] += ry;
      paired[c].push_back({rx, ry});
    }
    ++a.records;
  }
  a.empty = a.records == 0;
  if (!a.empty) {
    for (auto& m : a.models) {
      for (auto& v : m.mean_rank) v /= static_cast<double>(a.records);
    }
    for (std::size_t c = 0; c < 3; ++c) a.significance[c] = wilcoxon_signed_rank(paired[c]);
  }
  return a;
}

json to_json(const Aggregate& a) {
  json j = {{"empty", a.empty}, {"records", a.records}, {"skipped", a.skipped}};
  json models = json::array();
  for (const auto& m : a.models) {
    json ranks = json::object();
    for (std::size_t c = 0; c < 3; ++c) ranks[kCriteria[c]] = a.empty ? json(nullptr) : json(m.mean_rank[c]);
    models.push_back({{"name", m.name},
                      {"mean_rank", ranks},
                      {"mean_sentences", m.mean_sentences},
                      {"mean_words", m.mean_words}});
  }
  j["models"] = models;
  json sig = json::object();
  for (std::size_t c = 0; c < 3; ++c) {
    const auto& w = a.significance[c];
    sig[kCriteria[c]] = a.empty ? json(nullptr)
                                : json{{"p_value", w.p_value},
                                       {"statistic", w.statistic},
                                       {"n", w.n},
                                       {"exact", w.exact},
                                       {"degenerate", w.degenerate}};
  }
  j["significance"] = sig;
  json mapping = json::array();
  for (const auto& m : a.mapping) mapping.push_back({{"pair_id", m[0]}, {"model_a", m[1]}, {"model_b", m[2]}});
  j["mapping"] = mapping;
  return j;
}

EvalStore::EvalStore(std::optional<std::filesystem::path> log) : log_path_(std::move(log)) {
  if (!log_path_) return;
  if (std::filesystem::exists(*log_path_)) {
    std::ifstream in(*log_path_);
    if (!in) throw IoError("cannot read event log " + log_path_->string());
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
      ++number;
      if (line.empty()) continue;
      try {
        apply(json::parse(line));
      } catch (const std::exception& e) {
        throw FormatError(std::string("bad event: ") + e.what(), number);
      }
    }
  }
  log_.open(*log_path_, std::ios::app);
  if (!log_) throw IoError("cannot open event log " + log_path_->string());
}

void EvalStore::append(const json& event) {
  if (!log_path_) return;
  log_ << event.dump() << '\n';
  log_.flush();
  if (!log_) throw IoError("failed to write event log " + log_path_->string());
}

void EvalStore::apply(const json& event) {
  const auto type = event.at("type").get<std::string>();
  if (type == "session") {
    Session s;
    s.id = event.at("id").get<std::string>();
    s.model_x = event.at("model_x").get<std::string>();
    s.model_y = event.at("model_y").get<std::string>();
    s.seed = event.at("seed").get<std::uint64_t>();
    for (const auto& p : event.at("pairs")) s.pairs.push_back(pair_from_json(p));
    for (const auto& d : event.at("documents")) {
      Document doc = document_from_json(d);
      documents_[doc.id] = std::move(doc);
    }
    sessions_[s.id] = std::move(s);
  } else if (type == "ranking") {
    Session& s = sessions_.at(event.at("session").get<std::string>());
    RankingRecord r = ranking_from_json(event.at("record"));
    const auto key = record_key(r.pair_id, r.evaluator);
    if (auto it = s.records.find(key); it != s.records.end()) {
      s.audit.push_back({r.pair_id, r.evaluator, it->second.timestamp, r.timestamp});
      it->second = std::move(r);
    } else {
      s.records.emplace(key, std::move(r));
    }
  } else {
    throw std::invalid_argument("unknown event type '" + type + "'");
  }
}

const Session& EvalStore::session_ref(const std::string& id) const {
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

std::string EvalStore::create_session(const ModelOutputs& x, const ModelOutputs& y, std::span<const Document> docs,
                                      std::uint64_t seed, std::string id) {
  auto pairs = make_pairs(x, y, docs, seed);
  std::unique_lock lock(mutex_);
  if (id.empty()) {
    for (std::size_t n = sessions_.size();; ++n) {
      id = "s" + std::to_string(n);
      if (!sessions_.contains(id)) break;
    }
  } else if (sessions_.contains(id)) {
    throw std::invalid_argument("session '" + id + "' already exists");
  }
  json event = {{"type", "session"}, {"id", id}, {"model_x", x.name}, {"model_y", y.name}, {"seed", seed}};
  json pj = json::array();
  for (const auto& p : pairs) pj.push_back(pair_to_json(p));
  event["pairs"] = pj;
  json dj = json::array();
  for (const auto& d : docs) {
    if (x.summaries.contains(d.id)) dj.push_back(document_to_json(d));
  }
  event["documents"] = dj;
  append(event);
  apply(event);
  return id;
}

std::optional<SummaryPair> EvalStore::next_pair(const std::string& session, const std::string& evaluator) const {
  std::shared_lock lock(mutex_);
  const Session& s = session_ref(session);
  for (const auto& p : s.pairs) {
    if (!s.records.contains(record_key(p.pair_id, evaluator))) return p;
  }
  return std::nullopt;
}

bool EvalStore::submit_ranking(const std::string& session, RankingRecord record) {
  record.validate();
  if (record.timestamp.empty()) record.timestamp = now_iso8601();
  std::unique_lock lock(mutex_);
  const Session& s = session_ref(session);
  const bool known = std::any_of(s.pairs.begin(), s.pairs.end(),
                                 [&](const SummaryPair& p) { return p.pair_id == record.pair_id; });
  if (!known) throw NotFoundError("unknown pair '" + record.pair_id + "'");
  const bool replaces = s.records.contains(record_key(record.pair_id, record.evaluator));
  const json event = {{"type", "ranking"}, {"session", session}, {"record", to_json(record)}};
  append(event);
  apply(event);
  return replaces;
}

HighlightResult EvalStore::highlight(const std::string& session, const std::string& pair_id, std::string_view query,
                                     const Vocabulary& vocab, const EmbeddingTable& embeddings) const {
  std::shared_lock lock(mutex_);
  const Session& s = session_ref(session);
  for (const auto& p : s.pairs) {
    if (p.pair_id == pair_id) return evalsvc::highlight(p, query, vocab, embeddings);
  }
  throw NotFoundError("unknown pair '" + pair_id + "'");
}

Aggregate EvalStore::aggregate(const std::string& session) const {
  std::shared_lock lock(mutex_);
  return aggregate_rankings(session_ref(session));
}

Document EvalStore::document(const std::string& id) const {
  std::shared_lock lock(mutex_);
  const auto it = documents_.find(id);
  if (it == documents_.end()) throw NotFoundError("unknown document '" + id + "'");
  return it->second;
}

std::vector<RankingRecord> EvalStore::records(const std::string& session) const {
  std::shared_lock lock(mutex_);
  std::vector<RankingRecord> out;
  for (const auto& [k, r] : session_ref(session).records) out.push_back(r);
  return out;
}

std::vector<AuditNote> EvalStore::audit(const std::string& session) const {
  std::shared_lock lock(mutex_);
  return session_ref(session).audit;
}

std::vector<std::string> EvalStore::sessions() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

}  // namespace memsum::evalsvc
