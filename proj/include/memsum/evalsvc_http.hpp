#pragma once

#include <memory>
#include <string>
#include <vector>

#include "memsum/corpus.hpp"
#include "memsum/evalsvc.hpp"

namespace httplib {
class Server;
}

namespace memsum::evalsvc {

/// JSON over HTTP front end for an EvalStore.
///
///   POST /session                  {"seed", "model_x": {"name", "outputs": [{"id", "summary"}]}, "model_y", "id"?, "documents"?}
///   GET  /session/{id}/next?evaluator=E
///   POST /session/{id}/ranking     RankingRecord JSON
///   POST /session/{id}/highlight   {"pair_id", "query"}
///   GET  /session/{id}/aggregate
///   GET  /document/{id}
///
/// Errors answer {"error": message} with 400 (validation), 404 (unknown id) or 500.
class EvalServer {
 public:
  /// `corpus` backs sessions created without inline documents and /document lookups.
  EvalServer(EvalStore& store, Vocabulary vocab, EmbeddingTable embeddings, std::vector<Document> corpus = {});
  ~EvalServer();
  EvalServer(const EvalServer&) = delete;
  EvalServer& operator=(const EvalServer&) = delete;

  /// Binds to `port` (0 picks a free one) and returns the bound port, or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  bool serve();
  void stop();
  void wait_until_ready() const;

 private:
  void routes();

  EvalStore& store_;
  Vocabulary vocab_;
  EmbeddingTable embeddings_;
  std::vector<Document> corpus_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace memsum::evalsvc
