#include "truenet/synonym.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace truenet {

namespace {

std::vector<uint8_t> stopword_flags(const std::string& stopwords_path, const Vocabulary& vocab) {
  std::vector<uint8_t> flags(static_cast<size_t>(vocab.size()), 0);
  if (stopwords_path.empty()) return flags;
  for (const std::string& word : read_lines(stopwords_path)) {
    if (word.empty()) continue;
    const int32_t id = vocab.lookup(word);
    if (id != Vocabulary::kUnk) flags[static_cast<size_t>(id)] = 1;
  }
  return flags;
}

void finish_entries(SynonymTable& table, const Vocabulary& vocab) {
  int64_t eligible = 0, covered = 0;
  for (int32_t id = Vocabulary::kNumSpecial; id < vocab.size(); ++id) {
    auto& e = table.entries[static_cast<size_t>(id)];
    std::sort(e.begin(), e.end());
    e.erase(std::unique(e.begin(), e.end()), e.end());
    if (table.stopword[static_cast<size_t>(id)]) continue;
    ++eligible;
    if (!e.empty()) ++covered;
  }
  table.coverage = eligible > 0 ? static_cast<double>(covered) / static_cast<double>(eligible) : 0.0;
}

}  // namespace

bool SynonymTable::empty_entry(int32_t id) const {
  if (id < 0 || id >= vocab_size()) return true;
  return entries[static_cast<size_t>(id)].empty();
}

bool SynonymTable::contains(int32_t gold, int32_t predicted) const {
  if (gold < 0 || gold >= vocab_size()) return false;
  const auto& e = entries[static_cast<size_t>(gold)];
  return std::binary_search(e.begin(), e.end(), predicted);
}

const std::vector<int32_t>& SynonymTable::entry(int32_t id) const {
  if (id < 0 || id >= vocab_size()) throw std::out_of_range("synonym table: id out of range");
  return entries[static_cast<size_t>(id)];
}

void SynonymTable::check_invariants() const {
  for (int32_t id = 0; id < vocab_size(); ++id) {
    const auto& e = entries[static_cast<size_t>(id)];
    if (Vocabulary::is_special(id) && !e.empty()) throw std::logic_error("synonym table: special id has an entry");
    if (id < static_cast<int32_t>(stopword.size()) && stopword[static_cast<size_t>(id)] && !e.empty())
      throw std::logic_error("synonym table: stopword id has an entry");
    for (int32_t s : e) {
      if (s == id) throw std::logic_error("synonym table: entry contains its own key");
      if (s < Vocabulary::kNumSpecial || s >= vocab_size())
        throw std::logic_error("synonym table: entry id out of range");
    }
  }
}

std::unordered_set<std::string> load_stopwords(const std::string& path) {
  std::unordered_set<std::string> words;
  for (const std::string& line : read_lines(path))
    if (!line.empty()) words.insert(line);
  return words;
}

SynonymTable build_from_lexicon(const std::string& lexicon_path, const Vocabulary& vocab,
                                const std::string& stopwords_path, bool symmetrize) {
  SynonymTable table;
  table.source = SynonymTable::Source::lexicon;
  table.entries.assign(static_cast<size_t>(vocab.size()), {});
  table.stopword = stopword_flags(stopwords_path, vocab);

  const std::vector<std::string> lines = read_lines(lexicon_path);
  for (size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string& line = lines[ln];
    if (line.empty() || line[0] == '#') continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw std::runtime_error("lexicon '" + lexicon_path + "' line " + std::to_string(ln + 1) +
                               ": expected word<TAB>syn1,syn2,...");
    const std::string word = line.substr(0, tab);
    const int32_t id = vocab.lookup(word);
    if (id == Vocabulary::kUnk && word != vocab.token(Vocabulary::kUnk)) continue;  // word not in vocab
    if (table.stopword[static_cast<size_t>(id)]) continue;

    auto& entry = table.entries[static_cast<size_t>(id)];
    std::string syn;
    std::istringstream rest(line.substr(tab + 1));
    while (std::getline(rest, syn, ',')) {
      if (syn.empty()) continue;
      const int32_t sid = vocab.lookup(syn);
      if (sid == Vocabulary::kUnk) continue;  // synonym not in vocab
      if (sid == id) continue;                // never map a word to itself
      if (table.stopword[static_cast<size_t>(sid)]) continue;
      entry.push_back(sid);
    }
  }

  if (symmetrize) {
    std::vector<std::pair<int32_t, int32_t>> reverse;
    for (int32_t id = 0; id < vocab.size(); ++id)
      for (int32_t s : table.entries[static_cast<size_t>(id)]) reverse.emplace_back(s, id);
    for (const auto& [g, p] : reverse) table.entries[static_cast<size_t>(g)].push_back(p);
  }

  finish_entries(table, vocab);
  return table;
}

SynonymTable build_from_embeddings(const std::string& embedding_path, const Vocabulary& vocab,
                                   const std::string& stopwords_path, int k) {
  if (k < 1) throw std::invalid_argument("build_from_embeddings: k must be >= 1");
  SynonymTable table;
  table.source = SynonymTable::Source::embedding;
  table.entries.assign(static_cast<size_t>(vocab.size()), {});
  table.stopword = stopword_flags(stopwords_path, vocab);

  // in-vocab vectors only; first row fixes the dimension, first row per word wins
  std::vector<int32_t> ids;
  std::vector<std::vector<double>> vecs;
  std::vector<uint8_t> seen(static_cast<size_t>(vocab.size()), 0);
  int64_t dim = -1;
  const std::vector<std::string> lines = read_lines(embedding_path);
  for (size_t ln = 0; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    std::istringstream is(lines[ln]);
    std::string word;
    is >> word;
    std::vector<double> v;
    double x;
    while (is >> x) v.push_back(x);
    if (dim < 0) dim = static_cast<int64_t>(v.size());
    if (dim == 0 || static_cast<int64_t>(v.size()) != dim)
      throw std::runtime_error("embeddings '" + embedding_path + "' line " + std::to_string(ln + 1) +
                               ": inconsistent dimension (" + std::to_string(v.size()) + " vs " +
                               std::to_string(dim) + ")");
    const int32_t id = vocab.lookup(word);
    if (id == Vocabulary::kUnk && word != vocab.token(Vocabulary::kUnk)) continue;
    if (seen[static_cast<size_t>(id)]) continue;
    seen[static_cast<size_t>(id)] = 1;
    ids.push_back(id);
    vecs.push_back(std::move(v));
  }

  std::vector<double> norms(vecs.size());
  for (size_t i = 0; i < vecs.size(); ++i) {
    double n = 0;
    for (double x : vecs[i]) n += x * x;
    norms[i] = std::sqrt(n);
  }

  struct Scored {
    double cos;
    int32_t id;
  };
  for (size_t i = 0; i < vecs.size(); ++i) {
    const int32_t id = ids[i];
    if (table.stopword[static_cast<size_t>(id)]) continue;
    if (norms[i] == 0.0) continue;
    std::vector<Scored> scored;
    for (size_t j = 0; j < vecs.size(); ++j) {
      if (j == i) continue;
      if (table.stopword[static_cast<size_t>(ids[j])]) continue;
      if (ids[j] == id) continue;
      if (norms[j] == 0.0) continue;
      double dot = 0;
      for (int64_t c = 0; c < dim; ++c) dot += vecs[i][static_cast<size_t>(c)] * vecs[j][static_cast<size_t>(c)];
      scored.push_back({dot / (norms[i] * norms[j]), ids[j]});
    }
    std::sort(scored.begin(), scored.end(), [&vocab](const Scored& a, const Scored& b) {
      if (a.cos != b.cos) return a.cos > b.cos;
      return vocab.token(a.id) < vocab.token(b.id);
    });
    auto& entry = table.entries[static_cast<size_t>(id)];
    for (size_t r = 0; r < scored.size() && r < static_cast<size_t>(k); ++r) entry.push_back(scored[r].id);
  }

  finish_entries(table, vocab);
  return table;
}

CoverageReport coverage_stats(const SynonymTable& table, const Vocabulary& vocab) {
  CoverageReport rep;
  rep.size_histogram.assign(33, 0);
  int64_t total_size = 0;
  for (int32_t id = Vocabulary::kNumSpecial; id < vocab.size(); ++id) {
    if (id < static_cast<int32_t>(table.stopword.size()) && table.stopword[static_cast<size_t>(id)]) continue;
    const auto n = static_cast<int64_t>(table.entries[static_cast<size_t>(id)].size());
    ++rep.eligible_ids;
    if (n > 0) ++rep.covered_ids;
    total_size += n;
    rep.max_entry_size = std::max(rep.max_entry_size, n);
    ++rep.size_histogram[static_cast<size_t>(std::min<int64_t>(n, 32))];
  }
  rep.coverage = rep.eligible_ids > 0 ? static_cast<double>(rep.covered_ids) / static_cast<double>(rep.eligible_ids) : 0.0;
  rep.mean_entry_size = rep.eligible_ids > 0 ? static_cast<double>(total_size) / static_cast<double>(rep.eligible_ids) : 0.0;
  return rep;
}

void save_table(const SynonymTable& table, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("synonym table: cannot open '" + path + "' for writing");
  f << "#syn-table v1\n";
  for (int32_t id = 0; id < table.vocab_size(); ++id) {
    const auto& e = table.entries[static_cast<size_t>(id)];
    if (e.empty()) continue;
    f << id << '\t';
    for (size_t i = 0; i < e.size(); ++i) {
      if (i) f << ',';
      f << e[i];
    }
    f << '\n';
  }
  if (!f) throw std::runtime_error("synonym table: write failed for '" + path + "'");
}

SynonymTable load_table(const std::string& path, const Vocabulary& vocab, const std::string& stopwords_path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty() || lines[0] != "#syn-table v1")
    throw std::runtime_error("synonym table '" + path + "': missing '#syn-table v1' header");
  SynonymTable table;
  table.source = SynonymTable::Source::file;
  table.entries.assign(static_cast<size_t>(vocab.size()), {});
  table.stopword = stopword_flags(stopwords_path, vocab);
  for (size_t ln = 1; ln < lines.size(); ++ln) {
    const std::string& line = lines[ln];
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("synonym table '" + path + "' line " + std::to_string(ln + 1) + ": expected id<TAB>ids");
    const int32_t id = std::stoi(line.substr(0, tab));
    if (id < Vocabulary::kNumSpecial || id >= vocab.size())
      throw std::runtime_error("synonym table '" + path + "' line " + std::to_string(ln + 1) +
                               ": id " + std::to_string(id) + " not a non-special vocab id");
    auto& entry = table.entries[static_cast<size_t>(id)];
    std::string part;
    std::istringstream rest(line.substr(tab + 1));
    while (std::getline(rest, part, ',')) {
      if (part.empty()) continue;
      const int32_t sid = std::stoi(part);
      if (sid < Vocabulary::kNumSpecial || sid >= vocab.size() || sid == id)
        throw std::runtime_error("synonym table '" + path + "' line " + std::to_string(ln + 1) +
                                 ": invalid synonym id " + std::to_string(sid));
      entry.push_back(sid);
    }
  }
  finish_entries(table, vocab);
  return table;
}

}  // namespace truenet
