#include "memsum/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "memsum/autodiff/parameters.hpp"
#include "memsum/errors.hpp"

namespace memsum {

using nlohmann::json;

void CorpusConfig::validate() const {
  if (max_sentence_tokens < 1) throw std::invalid_argument("L_sen must be at least 1");
  if (max_document_sentences < 1) throw std::invalid_argument("L_doc must be at least 1");
}

TokenList tokenize(std::string_view text, bool lowercase) {
  TokenList tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      flush();
      tokens.emplace_back(1, ch);
    } else {
      current.push_back(lowercase && c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return tokens;
}

namespace {

std::vector<std::string> string_array(const json& record, const char* field, std::size_t line) {
  auto it = record.find(field);
  if (it == record.end()) throw FormatError(std::string("missing field \"") + field + "\"", line);
  if (!it->is_array()) throw FormatError(std::string("field \"") + field + "\" is not an array", line);
  std::vector<std::string> out;
  out.reserve(it->size());
  for (const auto& s : *it) {
    if (!s.is_string()) throw FormatError(std::string("non-string entry in \"") + field + "\"", line);
    out.push_back(s.get<std::string>());
  }
  return out;
}

// Drops sentences that tokenize to nothing, keeping raw and token lists aligned.
void fill_sentences(const std::vector<std::string>& raw, bool lowercase,
                    std::vector<TokenList>& tokens, std::vector<std::string>& kept) {
  for (const auto& s : raw) {
    auto t = tokenize(s, lowercase);
    if (t.empty()) continue;
    tokens.push_back(std::move(t));
    kept.push_back(s);
  }
}

}  // namespace

Document make_document(std::string id, const std::vector<std::string>& text,
                       const std::vector<std::string>& summary, bool lowercase) {
  Document doc;
  doc.id = std::move(id);
  fill_sentences(text, lowercase, doc.sentences, doc.raw_sentences);
  fill_sentences(summary, lowercase, doc.gold_summary, doc.raw_summary);
  return doc;
}

bool parse_document_record(std::string_view line, std::size_t line_number,
                           const CorpusConfig& config, Document& out) {
  json record;
  try {
    record = json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("invalid JSON: ") + e.what(), line_number);
  }
  if (!record.is_object()) throw FormatError("record is not an object", line_number);
  const auto text = string_array(record, "text", line_number);
  const auto summary = string_array(record, "summary", line_number);
  std::string id = "line-" + std::to_string(line_number);
  if (auto it = record.find("id"); it != record.end()) {
    if (it->is_string()) id = it->get<std::string>();
    else if (it->is_number_integer()) id = std::to_string(it->get<long long>());
    else throw FormatError("field \"id\" must be a string or integer", line_number);
  }
  out = make_document(std::move(id), text, summary, config.lowercase);
  return !out.sentences.empty() && !out.gold_summary.empty();
}

DatasetLoad load_dataset(const std::filesystem::path& path, const CorpusConfig& config) {
  config.validate();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  DatasetLoad result;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Document doc;
    try {
      if (parse_document_record(line, line_number, config, doc)) {
        result.documents.push_back(std::move(doc));
      } else {
        ++result.skipped;
      }
    } catch (const FormatError& e) {
      result.errors.push_back({line_number, e.what()});
    }
  }
  if (in.bad()) throw IoError("read error on " + path.string());
  return result;
}

void write_dataset(const std::filesystem::path& path, const std::vector<Document>& docs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& d : docs) {
    json rec = {{"id", d.id}, {"text", d.raw_sentences}, {"summary", d.raw_summary}};
    out << rec.dump() << '\n';
  }
}

Vocabulary::Vocabulary(std::string pad_token, std::string unk_token) {
  add(pad_token);
  add(unk_token);
}

std::size_t Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.try_emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::size_t Vocabulary::index(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.find(token) != index_.end(); }

Vocabulary build_vocabulary(const std::vector<Document>& docs, std::size_t min_count,
                            const CorpusConfig& config) {
  if (docs.empty()) throw std::invalid_argument("build_vocabulary: no documents");
  if (min_count < 1) throw std::invalid_argument("build_vocabulary: min_count must be at least 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& d : docs) {
    for (const auto& s : d.sentences)
      for (const auto& t : s) ++counts[t];
    for (const auto& s : d.gold_summary)
      for (const auto& t : s) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // std::map iteration is already lexicographic; stable sort keeps that as the tie order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab(config.pad_token);
  for (const auto& [token, count] : ranked) {
    if (count >= min_count) vocab.add(token);
  }
  return vocab;
}

namespace {

void fill_random_row(std::span<double> row, const std::string& word, std::uint64_t seed) {
  std::mt19937_64 rng(ad::fnv1a(word, seed));
  std::uniform_real_distribution<double> dist(-0.05, 0.05);
  for (auto& v : row) v = dist(rng);
}

}  // namespace

EmbeddingTable random_embedding_table(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw std::invalid_argument("embedding dimension must be positive");
  EmbeddingTable table;
  table.matrix = ad::Matrix<double>(vocab.size(), dim);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (i == Vocabulary::kPad) continue;
    fill_random_row(table.matrix.row(i), vocab.token(i), seed);
  }
  return table;
}

EmbeddingTable load_embedding_table(const std::filesystem::path& path, const Vocabulary& vocab,
                                    std::size_t dim, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file " + path.string());
  EmbeddingTable table = random_embedding_table(vocab, dim, seed);
  std::string line;
  std::size_t row_number = 0;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++row_number;
    std::istringstream fields(line);
    std::string word;
    if (!(fields >> word)) continue;
    values.clear();
    std::string field;
    while (fields >> field) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw FormatError("embedding row has a non-numeric value '" + field + "'", row_number);
      }
    }
    if (values.size() != dim) {
      throw FormatError("embedding row has " + std::to_string(values.size()) + " values, expected " +
                            std::to_string(dim),
                        row_number);
    }
    if (!vocab.contains(word)) continue;
    const std::size_t idx = vocab.index(word);
    if (idx == Vocabulary::kPad) continue;
    std::copy(values.begin(), values.end(), table.matrix.row(idx).begin());
  }
  return table;
}

std::size_t EncodedDocument::valid_sentences() const {
  return static_cast<std::size_t>(std::count(sentence_mask.begin(), sentence_mask.end(), 1));
}

EncodedDocument encode_document(const Document& doc, const Vocabulary& vocab,
                                const CorpusConfig& config) {
  config.validate();
  EncodedDocument enc;
  enc.max_sentences = config.max_document_sentences;
  enc.max_tokens = config.max_sentence_tokens;
  enc.token_ids.assign(enc.max_sentences * enc.max_tokens, Vocabulary::kPad);
  enc.sentence_mask.assign(enc.max_sentences, 0);
  enc.token_counts.assign(enc.max_sentences, 0);
  const std::size_t n = std::min(doc.sentences.size(), enc.max_sentences);
  for (std::size_t s = 0; s < n; ++s) {
    const auto& sentence = doc.sentences[s];
    const std::size_t len = std::min(sentence.size(), enc.max_tokens);
    for (std::size_t t = 0; t < len; ++t) enc.token_ids[s * enc.max_tokens + t] = vocab.index(sentence[t]);
    enc.token_counts[s] = len;
    enc.sentence_mask[s] = 1;
  }
  return enc;
}

}  // namespace memsum
