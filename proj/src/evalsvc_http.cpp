#include "memsum/evalsvc_http.hpp"

#include <httplib.h>

#include "memsum/errors.hpp"

namespace memsum::evalsvc {

using nlohmann::json;

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("request body is not valid JSON: ") + e.what());
  }
}

ModelOutputs parse_outputs(const json& j, const char* field) {
  const auto it = j.find(field);
  if (it == j.end() || !it->is_object()) throw ValidationError(std::string(field) + " is required");
  ModelOutputs m;
  try {
    m.name = it->at("name").get<std::string>();
    for (const auto& rec : it->at("outputs")) {
      const auto id = rec.at("id").get<std::string>();
      if (!m.summaries.emplace(id, rec.at("summary").get<std::vector<std::string>>()).second) {
        throw ValidationError(std::string(field) + " lists document '" + id + "' twice");
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed ") + field + ": " + e.what());
  }
  return m;
}

std::vector<Document> parse_documents(const json& j) {
  std::vector<Document> docs;
  std::size_t line = 0;
  for (const auto& d : j) {
    ++line;
    Document doc;
    try {
      if (parse_document_record(d.dump(), line, CorpusConfig{}, doc)) docs.push_back(std::move(doc));
    } catch (const std::exception& e) {
      throw ValidationError(std::string("malformed document: ") + e.what());
    }
  }
  return docs;
}

template <typename F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const NotFoundError& e) {
    reply(res, 404, {{"error", e.what()}});
  } catch (const std::invalid_argument& e) {
    reply(res, 400, {{"error", e.what()}});
  } catch (const json::exception& e) {
    reply(res, 400, {{"error", e.what()}});
  } catch (const std::exception& e) {
    reply(res, 500, {{"error", e.what()}});
  }
}

}  // namespace

EvalServer::EvalServer(EvalStore& store, Vocabulary vocab, EmbeddingTable embeddings, std::vector<Document> corpus)
    : store_(store),
      vocab_(std::move(vocab)),
      embeddings_(std::move(embeddings)),
      corpus_(std::move(corpus)),
      server_(std::make_unique<httplib::Server>()) {
  routes();
}

EvalServer::~EvalServer() { stop(); }

void EvalServer::routes() {
  auto& s = *server_;

  s.Post("/session", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      if (!body.is_object()) throw ValidationError("request body must be a JSON object");
      const auto x = parse_outputs(body, "model_x");
      const auto y = parse_outputs(body, "model_y");
      const auto seed = body.value("seed", std::uint64_t{0});
      const auto id = body.value("id", std::string{});
      std::string session;
      if (auto it = body.find("documents"); it != body.end()) {
        const auto docs = parse_documents(*it);
        session = store_.create_session(x, y, docs, seed, id);
      } else {
        session = store_.create_session(x, y, corpus_, seed, id);
      }
      reply(res, 201, {{"session", session}, {"pairs", x.summaries.size()}});
    });
  });

  s.Get(R"(/session/([^/]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto evaluator = req.get_param_value("evaluator");
      if (evaluator.empty()) throw ValidationError("evaluator query parameter is required");
      const auto pair = store_.next_pair(req.matches[1], evaluator);
      if (!pair) {
        reply(res, 200, {{"done", true}});
      } else {
        reply(res, 200, {{"done", false}, {"pair", public_view(*pair)}});
      }
    });
  });

  s.Post(R"(/session/([^/]+)/ranking)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto record = ranking_from_json(parse_body(req));
      const bool replaced = store_.submit_ranking(req.matches[1], record);
      reply(res, 200, {{"stored", true}, {"replaced", replaced}});
    });
  });

  s.Post(R"(/session/([^/]+)/highlight)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      if (!body.is_object()) throw ValidationError("request body must be a JSON object");
      const auto pair_id = body.value("pair_id", std::string{});
      const auto query = body.value("query", std::string{});
      const auto r = store_.highlight(req.matches[1], pair_id, query, vocab_, embeddings_);
      reply(res, 200, {{"pair_id", pair_id}, {"a", r.a}, {"b", r.b}});
    });
  });

  s.Get(R"(/session/([^/]+)/aggregate)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, to_json(store_.aggregate(req.matches[1]))); });
  });

  s.Get(R"(/document/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      Document doc;
      try {
        doc = store_.document(id);
      } catch (const NotFoundError&) {
        const auto it = std::find_if(corpus_.begin(), corpus_.end(), [&](const Document& d) { return d.id == id; });
        if (it == corpus_.end()) throw;
        doc = *it;
      }
      reply(res, 200, {{"id", doc.id}, {"text", doc.raw_sentences}, {"summary", doc.raw_summary}});
    });
  });
}

int EvalServer::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  return server_->bind_to_port(host, port) ? port : -1;
}

bool EvalServer::serve() { return server_->listen_after_bind(); }

void EvalServer::stop() {
  if (server_) server_->stop();
}

void EvalServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace memsum::evalsvc
