#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "memsum/autodiff/matrix.hpp"

namespace memsum {

using TokenList = std::vector<std::string>;

struct Document {
  std::string id;
  std::vector<TokenList> sentences;
  std::vector<TokenList> gold_summary;
  std::vector<std::string> raw_sentences;  // same length as sentences
  std::vector<std::string> raw_summary;    // same length as gold_summary
};

struct CorpusConfig {
  std::size_t max_sentence_tokens = 100;   // L_sen
  std::size_t max_document_sentences = 500;  // L_doc
  std::string pad_token = "PAD";
  bool lowercase = true;

  void validate() const;
};

/// Splits on whitespace after detaching ASCII punctuation into separate tokens.
TokenList tokenize(std::string_view text, bool lowercase = true);

struct RecordError {
  std::size_t line = 0;
  std::string message;
};

struct DatasetLoad {
  std::vector<Document> documents;
  std::size_t skipped = 0;           // records with empty text or summary
  std::vector<RecordError> errors;   // malformed lines; loading continued past them
};

/// Parses one JSON Lines record ({"text": [...], "summary": [...], "id"?}).
/// Returns false for an empty document or summary. Throws on malformed input.
bool parse_document_record(std::string_view line, std::size_t line_number,
                           const CorpusConfig& config, Document& out);

/// Reads a JSON Lines dataset. Throws IoError if the file can't be opened.
DatasetLoad load_dataset(const std::filesystem::path& path, const CorpusConfig& config);

/// Builds a document straight from sentence strings (tests, synthetic data).
Document make_document(std::string id, const std::vector<std::string>& text,
                       const std::vector<std::string>& summary, bool lowercase = true);

/// Writes documents back as {"id", "text", "summary"} JSON Lines.
void write_dataset(const std::filesystem::path& path, const std::vector<Document>& docs);

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  explicit Vocabulary(std::string pad_token = "PAD", std::string unk_token = "UNK");

  /// Appends a token if new; returns its index.
  std::size_t add(const std::string& token);
  std::size_t index(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(std::size_t index) const { return tokens_.at(index); }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t, Hash, std::equal_to<>> index_;
};

/// PAD and UNK first, then every token (document and summary sentences) seen at
/// least `min_count` times, by descending frequency and then lexicographically.
Vocabulary build_vocabulary(const std::vector<Document>& docs, std::size_t min_count,
                            const CorpusConfig& config = {});

struct EmbeddingTable {
  ad::Matrix<double> matrix;  // vocabulary size x dim
  bool trainable = false;

  std::size_t dim() const noexcept { return matrix.cols(); }
  std::size_t rows() const noexcept { return matrix.rows(); }
};

/// Seeded table: PAD row zero, every other row uniform in [-0.05, 0.05].
/// A word's row depends only on the word and the seed.
EmbeddingTable random_embedding_table(const Vocabulary& vocab, std::size_t dim,
                                      std::uint64_t seed = 0);

/// Loads GloVe text rows ("word v1 ... vd") for in-vocabulary words; all
/// other rows as in random_embedding_table. Throws FormatError on width mismatch.
EmbeddingTable load_embedding_table(const std::filesystem::path& path, const Vocabulary& vocab,
                                    std::size_t dim, std::uint64_t seed = 0);

/// Fixed-size index view of a document after padding and truncation.
struct EncodedDocument {
  std::size_t max_sentences = 0;  // L_doc
  std::size_t max_tokens = 0;     // L_sen
  std::vector<std::size_t> token_ids;       // max_sentences * max_tokens, row-major
  std::vector<std::uint8_t> sentence_mask;  // max_sentences
  std::vector<std::size_t> token_counts;    // pre-padding lengths clamped to L_sen

  std::size_t valid_sentences() const;
  std::size_t id(std::size_t sentence, std::size_t token) const {
    return token_ids[sentence * max_tokens + token];
  }
};

EncodedDocument encode_document(const Document& doc, const Vocabulary& vocab,
                                const CorpusConfig& config);

}  // namespace memsum
