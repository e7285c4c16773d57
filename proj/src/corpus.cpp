#include "marginmt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include "json.hpp"
#include <numeric>
#include <stdexcept>

#include "marginmt/random.hpp"

namespace marginmt {

namespace {
const std::vector<std::string> kReserved = {"<pad>", "<s>", "</s>", "<unk>"};
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& content_tokens) {
  tokens_ = kReserved;
  for (const auto& t : content_tokens) {
    if (std::find(kReserved.begin(), kReserved.end(), t) != kReserved.end())
      throw std::invalid_argument("vocab: content token '" + t + "' collides with a reserved token");
    tokens_.push_back(t);
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("vocab: duplicate token '" + tokens_[i] + "'");
  }
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write vocab file " + path.string());
  for (const auto& t : tokens_) os << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read vocab file " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.size() < kReserved.size() || !std::equal(kReserved.begin(), kReserved.end(), lines.begin()))
    throw std::runtime_error("vocab file " + path.string() + " lacks the reserved header");
  return Vocab(std::vector<std::string>(lines.begin() + kNumReserved, lines.end()));
}

std::string to_string(Task t) {
  switch (t) {
    case Task::Copy: return "copy";
    case Task::Reverse: return "reverse";
    case Task::LexiconTranslate: return "lexicon-translate";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  if (name == "copy") return Task::Copy;
  if (name == "reverse") return Task::Reverse;
  if (name == "lexicon-translate") return Task::LexiconTranslate;
  throw std::invalid_argument("unknown task '" + name + "'");
}

void CorpusOptions::validate() const {
  if (!(hallucination_rate >= 0 && hallucination_rate < 1))
    throw std::invalid_argument("corpus: hallucination_rate must lie in [0, 1)");
  if (vocab_size <= 8) throw std::invalid_argument("corpus: vocab_size must exceed 8");
  if (len_min < 1 || len_max < len_min) throw std::invalid_argument("corpus: invalid length range");
  if (branching < 1 || branching > vocab_size) throw std::invalid_argument("corpus: branching must lie in [1, vocab_size]");
  if (n_pairs == 0) throw std::invalid_argument("corpus: n_pairs must be positive");
}

namespace {

// The synthetic language: a sparse first-order Markov chain over content
// tokens plus the source-to-target lexicon.
struct Language {
  int vocab = 0;
  std::vector<std::vector<int>> successors;
  std::vector<std::vector<double>> cumulative;
  std::vector<int> lexicon;

  Language(const CorpusOptions& o) : vocab(o.vocab_size) {
    auto rng = rnd::engine(o.seed, 0x1a49);
    successors.resize(vocab);
    cumulative.resize(vocab);
    std::vector<int> all(vocab);
    std::iota(all.begin(), all.end(), 0);
    for (int t = 0; t < vocab; ++t) {
      rnd::shuffle(std::span<int>(all), rng);
      successors[t].assign(all.begin(), all.begin() + o.branching);
      double total = 0;
      for (int j = 0; j < o.branching; ++j) {
        total += 0.25 + rnd::unit(rng);
        cumulative[t].push_back(total);
      }
      for (double& c : cumulative[t]) c /= total;
    }
    lexicon.resize(vocab);
    std::iota(lexicon.begin(), lexicon.end(), 0);
    if (o.task == Task::LexiconTranslate) rnd::shuffle(std::span<int>(lexicon), rng);
  }

  std::vector<int> sample(rnd::Engine& rng, int len) const {
    std::vector<int> s;
    s.reserve(len);
    int cur = static_cast<int>(rnd::below(rng, vocab));
    s.push_back(cur);
    while (static_cast<int>(s.size()) < len) {
      const double u = rnd::unit(rng);
      const auto& cum = cumulative[cur];
      std::size_t j = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
      j = std::min(j, cum.size() - 1);
      cur = successors[cur][j];
      s.push_back(cur);
    }
    return s;
  }

  std::vector<int> translate(const std::vector<int>& src, Task task) const {
    std::vector<int> out;
    out.reserve(src.size());
    for (int t : src) out.push_back(lexicon[t]);
    if (task == Task::Reverse) std::reverse(out.begin(), out.end());
    return out;
  }
};

std::vector<std::string> names(const char* prefix, int n) {
  std::vector<std::string> v;
  for (int i = 0; i < n; ++i) v.push_back(prefix + std::to_string(i));
  return v;
}

std::vector<int> to_ids(const std::vector<int>& content) {
  std::vector<int> ids;
  ids.reserve(content.size());
  for (int t : content) ids.push_back(t + kNumReserved);
  return ids;
}

Corpus sample_pairs(const CorpusOptions& o, const Language& lang, rnd::Engine& rng, std::size_t n,
                    std::int64_t first_id) {
  Corpus c;
  c.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int len = rnd::between(rng, o.len_min, o.len_max);
    auto src = lang.sample(rng, len);
    SentencePair p;
    p.id = first_id + static_cast<std::int64_t>(i);
    p.tgt = to_ids(lang.translate(src, o.task));
    p.src = to_ids(src);
    c.push_back(std::move(p));
  }
  return c;
}

}  // namespace

GeneratedCorpus generate_corpus(const CorpusOptions& o) {
  o.validate();
  Language lang(o);
  GeneratedCorpus g;
  if (o.task == Task::LexiconTranslate) {
    g.src_vocab = Vocab(names("s", o.vocab_size));
    g.tgt_vocab = Vocab(names("t", o.vocab_size));
  } else {
    g.src_vocab = Vocab(names("w", o.vocab_size));
    g.tgt_vocab = g.src_vocab;
  }
  auto rng = rnd::engine(o.seed, 0x7a11);
  g.pairs = sample_pairs(o, lang, rng, o.n_pairs, 0);

  auto hrng = rnd::engine(o.seed, 0x4a11);
  std::vector<std::vector<int>> clean_targets;
  clean_targets.reserve(g.pairs.size());
  for (const auto& p : g.pairs) clean_targets.push_back(p.tgt);
  for (std::size_t i = 0; i < g.pairs.size(); ++i) {
    if (!rnd::bernoulli(hrng, o.hallucination_rate)) continue;
    const auto len = static_cast<long>(g.pairs[i].src.size());
    std::vector<std::size_t> candidates;
    for (std::size_t j = 0; j < g.pairs.size(); ++j) {
      if (j == i || clean_targets[j] == clean_targets[i]) continue;
      if (std::abs(static_cast<long>(clean_targets[j].size()) - len) <= 2) candidates.push_back(j);
    }
    if (candidates.empty()) continue;
    const std::size_t j = candidates[rnd::below(hrng, candidates.size())];
    g.pairs[i].tgt = clean_targets[j];
    g.pairs[i].label = PairLabel::Hallucinated;
  }
  return g;
}

Corpus generate_clean_pairs(const CorpusOptions& o, std::size_t n, std::uint64_t stream, std::int64_t first_id) {
  o.validate();
  Language lang(o);
  auto rng = rnd::engine(o.seed, 0x10000 + stream);
  return sample_pairs(o, lang, rng, n, first_id);
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus, const Vocab& src_vocab,
                 const Vocab& tgt_vocab) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write corpus file " + path.string());
  for (const auto& p : corpus) {
    nlohmann::json j;
    j["id"] = p.id;
    j["src"] = src_vocab.decode(p.src);
    j["tgt"] = tgt_vocab.decode(p.tgt);
    j["label"] = p.label == PairLabel::Clean ? "clean" : "hallucinated";
    os << j.dump() << '\n';
  }
}

Corpus load_corpus(const std::filesystem::path& path, const Vocab& src_vocab, const Vocab& tgt_vocab) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read corpus file " + path.string());
  Corpus c;
  std::size_t line_no = 0;
  for (std::string line; std::getline(is, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      SentencePair p;
      p.id = j.at("id").get<std::int64_t>();
      p.src = src_vocab.encode(j.at("src").get<std::vector<std::string>>());
      p.tgt = tgt_vocab.encode(j.at("tgt").get<std::vector<std::string>>());
      const auto label = j.value("label", std::string("clean"));
      if (label == "clean") p.label = PairLabel::Clean;
      else if (label == "hallucinated") p.label = PairLabel::Hallucinated;
      else throw std::runtime_error("unknown label '" + label + "'");
      if (p.src.empty() || p.tgt.empty()) throw std::runtime_error("empty sentence");
      c.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

std::size_t pair_tokens(const SentencePair& p) { return std::max(p.src.size(), p.tgt.size() + 1); }

Batch collate(const Corpus& corpus, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("collate: empty batch");
  Batch b;
  b.size = indices.size();
  for (auto i : indices) {
    b.src_len = std::max(b.src_len, corpus.at(i).src.size());
    b.tgt_len = std::max(b.tgt_len, corpus[i].tgt.size() + 1);
  }
  b.src.assign(b.size * b.src_len, kPad);
  b.src_pad.assign(b.size * b.src_len, 1);
  b.tgt_in.assign(b.size * b.tgt_len, kPad);
  b.tgt_out.assign(b.size * b.tgt_len, kPad);
  b.tgt_pad.assign(b.size * b.tgt_len, 1);
  for (std::size_t r = 0; r < b.size; ++r) {
    const auto& p = corpus[indices[r]];
    for (std::size_t t = 0; t < p.src.size(); ++t) {
      b.src[r * b.src_len + t] = p.src[t];
      b.src_pad[r * b.src_len + t] = 0;
    }
    const std::size_t n = p.tgt.size() + 1;
    for (std::size_t t = 0; t < n; ++t) {
      b.tgt_in[r * b.tgt_len + t] = t == 0 ? kBos : p.tgt[t - 1];
      b.tgt_out[r * b.tgt_len + t] = t + 1 == n ? kEos : p.tgt[t];
      b.tgt_pad[r * b.tgt_len + t] = 0;
    }
    b.pair_ids.push_back(p.id);
  }
  b.indices = indices;
  return b;
}

std::vector<std::vector<std::size_t>> make_batches(const Corpus& corpus, std::size_t batch_tokens, std::uint64_t seed,
                                                   std::uint64_t epoch) {
  for (const auto& p : corpus)
    if (pair_tokens(p) > batch_tokens)
      throw std::invalid_argument("make_batches: pair " + std::to_string(p.id) + " needs " +
                                  std::to_string(pair_tokens(p)) + " tokens, budget is " +
                                  std::to_string(batch_tokens));
  auto rng = rnd::engine(seed, 0xba7c0000ULL + epoch);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  rnd::shuffle(std::span<std::size_t>(order), rng);

  // Length-sort inside windows to keep padding low, then pack greedily.
  constexpr std::size_t kWindow = 512;
  for (std::size_t w = 0; w < order.size(); w += kWindow) {
    auto end = order.begin() + static_cast<long>(std::min(order.size(), w + kWindow));
    std::stable_sort(order.begin() + static_cast<long>(w), end,
                     [&](std::size_t a, std::size_t b) { return pair_tokens(corpus[a]) < pair_tokens(corpus[b]); });
  }
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> cur;
  std::size_t longest = 0;
  for (auto i : order) {
    const std::size_t t = std::max(longest, pair_tokens(corpus[i]));
    if (!cur.empty() && t * (cur.size() + 1) > batch_tokens) {
      batches.push_back(std::move(cur));
      cur.clear();
      longest = 0;
    }
    cur.push_back(i);
    longest = std::max(longest, pair_tokens(corpus[i]));
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  rnd::shuffle(std::span<std::vector<std::size_t>>(batches), rng);
  return batches;
}

}  // namespace marginmt
