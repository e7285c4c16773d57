#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace marginmt {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kNumReserved = 4;

/// Token strings <-> contiguous ids. Ids 0..3 are PAD, BOS, EOS, UNK.
class Vocab {
 public:
  Vocab();
  explicit Vocab(const std::vector<std::string>& content_tokens);

  int id(const std::string& token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  /// One token per line, reserved tokens first.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

enum class PairLabel { Clean, Hallucinated };

struct SentencePair {
  std::int64_t id = 0;
  std::vector<int> src;
  std::vector<int> tgt;
  PairLabel label = PairLabel::Clean;
};

using Corpus = std::vector<SentencePair>;

enum class Task { Copy, Reverse, LexiconTranslate };

std::string to_string(Task t);
Task parse_task(const std::string& name);

struct CorpusOptions {
  Task task = Task::LexiconTranslate;
  std::size_t n_pairs = 2000;
  int len_min = 4;
  int len_max = 12;
  /// Content tokens per language (reserved ids come on top).
  int vocab_size = 24;
  double hallucination_rate = 0.1;
  /// Successors per token in the Markov chain that generates sentences.
  int branching = 3;
  std::uint64_t seed = 1;

  void validate() const;
};

struct GeneratedCorpus {
  Vocab src_vocab;
  Vocab tgt_vocab;
  Corpus pairs;
};

/// Training-style corpus: Markov-chain source sentences, task-specific
/// targets, and a Bernoulli(rate) subset whose target is replaced by the
/// target of a different pair with length within +-2 (a fluent, unrelated
/// sentence). Pure in (options).
GeneratedCorpus generate_corpus(const CorpusOptions& options);

/// Clean pairs from the same language as `generate_corpus(options)`, drawn
/// from an independent stream. Ids start at `first_id`.
Corpus generate_clean_pairs(const CorpusOptions& options, std::size_t n, std::uint64_t stream, std::int64_t first_id);

/// JSON-lines: {"id", "src": [tokens], "tgt": [tokens], "label"}.
void save_corpus(const std::filesystem::path& path, const Corpus& corpus, const Vocab& src_vocab,
                 const Vocab& tgt_vocab);
Corpus load_corpus(const std::filesystem::path& path, const Vocab& src_vocab, const Vocab& tgt_vocab);

/// Padded tensors for one batch. Target input is BOS + y, target output is
/// y + EOS; both have `tgt_len` columns.
struct Batch {
  std::size_t size = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<int> src;          // size * src_len
  std::vector<int> tgt_in;       // size * tgt_len
  std::vector<int> tgt_out;      // size * tgt_len
  std::vector<std::uint8_t> src_pad;
  std::vector<std::uint8_t> tgt_pad;
  std::vector<std::int64_t> pair_ids;
  std::vector<std::size_t> indices;  // positions in the source corpus
};

/// Padded token footprint of a pair: max(|src|, |tgt| + 1).
std::size_t pair_tokens(const SentencePair& p);

Batch collate(const Corpus& corpus, const std::vector<std::size_t>& indices);

/// Partitions the corpus into batches for one epoch. Every pair appears
/// exactly once; each batch's padded footprint (rows * longest row) stays
/// within `batch_tokens`. Order is a pure function of (seed, epoch).
std::vector<std::vector<std::size_t>> make_batches(const Corpus& corpus, std::size_t batch_tokens, std::uint64_t seed,
                                                   std::uint64_t epoch);

}  // namespace marginmt
