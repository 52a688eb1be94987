#include "truenet/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace truenet {

namespace {
const char* kSpecialNames[Vocabulary::kNumSpecial] = {"[PAD]", "[UNK]", "[CLS]", "[MASK]"};
constexpr const char* kVocabHeader = "#specials PAD UNK CLS MASK";

bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c >= 0x80;
}
}  // namespace

Vocabulary::Vocabulary() {
  for (int i = 0; i < kNumSpecial; ++i) {
    id_to_token.emplace_back(kSpecialNames[i]);
    token_to_id.emplace(kSpecialNames[i], i);
  }
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& ordered_tokens) {
  Vocabulary v;
  for (const auto& tok : ordered_tokens) {
    if (v.token_to_id.count(tok)) throw std::invalid_argument("vocabulary: duplicate token '" + tok + "'");
    v.token_to_id.emplace(tok, v.size());
    v.id_to_token.push_back(tok);
  }
  return v;
}

int32_t Vocabulary::lookup(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int32_t id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  return id_to_token[static_cast<size_t>(id)];
}

std::string Vocabulary::serialize() const {
  std::string out = kVocabHeader;
  out += '\n';
  for (int32_t i = kNumSpecial; i < size(); ++i) {
    out += id_to_token[static_cast<size_t>(i)];
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("vocabulary: cannot open '" + path + "' for writing");
  f << serialize();
  if (!f) throw std::runtime_error("vocabulary: write failed for '" + path + "'");
}

Vocabulary Vocabulary::deserialize(const std::string& content) {
  std::vector<std::string> tokens;
  size_t pos = 0;
  bool first = true;
  while (pos < content.size()) {
    size_t nl = content.find('\n', pos);
    if (nl == std::string::npos) nl = content.size();
    std::string line = content.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = nl + 1;
    if (first) {
      if (line != kVocabHeader)
        throw std::runtime_error("vocabulary: bad header line '" + line + "'");
      first = false;
      continue;
    }
    if (line.empty()) continue;
    tokens.push_back(line);
  }
  if (first) throw std::runtime_error("vocabulary: empty file");
  return from_tokens(tokens);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("vocabulary: cannot open '" + path + "'");
  std::string content((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(content);
}

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : line) {
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    if (is_word_byte(c)) {
      current.push_back(static_cast<char>(c));
      continue;
    }
    if (!current.empty()) {
      tokens.push_back(current);
      current.clear();
    }
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f') continue;
    tokens.emplace_back(1, static_cast<char>(c));
  }
  if (!current.empty()) tokens.push_back(current);
  return tokens;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open corpus '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

Vocabulary build_vocab(const std::string& corpus_path, int min_count, int max_size) {
  if (min_count < 1) throw std::invalid_argument("build_vocab: min_count must be >= 1");
  if (max_size < 0) throw std::invalid_argument("build_vocab: max_size must be >= 0");
  std::unordered_map<std::string, int64_t> counts;
  for (const std::string& line : read_lines(corpus_path))
    for (const std::string& tok : tokenize(line)) ++counts[tok];

  std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<std::string> kept;
  for (const auto& [tok, count] : ranked) {
    if (count < min_count) break;
    if (static_cast<int>(kept.size()) >= max_size) break;
    kept.push_back(tok);
  }
  return Vocabulary::from_tokens(kept);
}

std::vector<int32_t> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab, int max_len) {
  if (max_len < 2) throw std::invalid_argument("encode: max_len must be >= 2");
  std::vector<int32_t> ids;
  ids.reserve(static_cast<size_t>(max_len));
  ids.push_back(Vocabulary::kCls);
  for (const std::string& tok : tokens) {
    if (static_cast<int>(ids.size()) >= max_len) break;
    ids.push_back(vocab.lookup(tok));
  }
  while (static_cast<int>(ids.size()) < max_len) ids.push_back(Vocabulary::kPad);
  return ids;
}

std::vector<std::string> decode(const std::vector<int32_t>& ids, const Vocabulary& vocab) {
  std::vector<std::string> tokens;
  for (int32_t id : ids) {
    if (id == Vocabulary::kPad || id == Vocabulary::kCls) continue;
    tokens.push_back(vocab.token(id));
  }
  return tokens;
}

void CorruptionPolicy::validate() const {
  if (p_mask < 0 || p_random < 0 || p_keep < 0 || std::fabs(p_mask + p_random + p_keep - 1.0) > 1e-9)
    throw std::invalid_argument("corruption policy: probabilities must be non-negative and sum to 1");
}

int64_t MaskedBatch::masked_total() const {
  int64_t n = 0;
  for (const auto& y : mask_positions) n += static_cast<int64_t>(y.size());
  return n;
}

std::vector<int32_t> MaskedBatch::masked_flat() const {
  std::vector<int32_t> flat;
  flat.reserve(static_cast<size_t>(masked_total()));
  for (int32_t b = 0; b < rows(); ++b)
    for (int32_t t : mask_positions[static_cast<size_t>(b)]) flat.push_back(b * cols() + t);
  return flat;
}

void MaskedBatch::check_invariants(double mask_ratio) const {
  for (int32_t b = 0; b < rows(); ++b) {
    const auto& y = mask_positions[static_cast<size_t>(b)];
    const int64_t limit = static_cast<int64_t>(std::ceil(mask_ratio * attention_len[static_cast<size_t>(b)])) + 1;
    if (static_cast<int64_t>(y.size()) > limit) throw std::logic_error("masked batch: |Y| above the ratio bound");
    for (int32_t t = 0; t < cols(); ++t) {
      const bool in_y = std::find(y.begin(), y.end(), t) != y.end();
      if ((labels.at(b, t) >= 0) != in_y) throw std::logic_error("masked batch: label/Y inconsistency");
    }
  }
}

void apply_masking(std::vector<int32_t>& ids, int32_t attn_len, double mask_ratio, const CorruptionPolicy& policy,
                   const Vocabulary& vocab, Rng& rng, std::vector<int32_t>& labels_out,
                   std::vector<int32_t>& positions_out) {
  if (mask_ratio <= 0.0 || mask_ratio >= 1.0) throw std::invalid_argument("apply_masking: mask_ratio must be in (0,1)");
  policy.validate();
  labels_out.assign(ids.size(), -1);
  positions_out.clear();

  std::vector<int32_t> eligible;
  for (int32_t t = 1; t < attn_len; ++t)
    if (!Vocabulary::is_special(ids[static_cast<size_t>(t)])) eligible.push_back(t);
  const auto want = static_cast<int64_t>(std::lround(mask_ratio * static_cast<double>(eligible.size())));
  if (want <= 0) return;

  // partial Fisher-Yates for the first `want` picks
  for (int64_t i = 0; i < want; ++i) {
    const int64_t j = i + rng.uniform_int(static_cast<int64_t>(eligible.size()) - i);
    std::swap(eligible[static_cast<size_t>(i)], eligible[static_cast<size_t>(j)]);
  }
  positions_out.assign(eligible.begin(), eligible.begin() + want);
  std::sort(positions_out.begin(), positions_out.end());

  const int32_t non_special = vocab.size() - Vocabulary::kNumSpecial;
  for (int32_t t : positions_out) {
    labels_out[static_cast<size_t>(t)] = ids[static_cast<size_t>(t)];
    const double u = rng.uniform();
    if (u < policy.p_mask) {
      ids[static_cast<size_t>(t)] = Vocabulary::kMask;
    } else if (u < policy.p_mask + policy.p_random) {
      if (non_special <= 0) throw std::logic_error("apply_masking: no non-special ids to sample");
      ids[static_cast<size_t>(t)] =
          Vocabulary::kNumSpecial + static_cast<int32_t>(rng.uniform_int(non_special));
    }
    // else keep the original id
  }
}

BatchStream::BatchStream(const std::string& corpus_path, const Vocabulary& vocab, int batch_size, int max_len,
                         double mask_ratio, CorruptionPolicy policy, uint64_t seed)
    : vocab_(vocab),
      batch_size_(batch_size),
      max_len_(max_len),
      mask_ratio_(mask_ratio),
      policy_(policy),
      seed_(seed) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  policy.validate();
  for (const std::string& line : read_lines(corpus_path)) {
    std::vector<int32_t> ids = encode(tokenize(line), vocab, max_len);
    int32_t len = 0;
    while (len < static_cast<int32_t>(ids.size()) && ids[static_cast<size_t>(len)] != Vocabulary::kPad) ++len;
    encoded_.push_back(std::move(ids));
    attn_len_.push_back(len);
  }
  if (encoded_.empty()) throw std::runtime_error("make_batches: corpus '" + corpus_path + "' has no lines");
}

int64_t BatchStream::batches_per_epoch() const {
  const int64_t n = line_count();
  return (n + batch_size_ - 1) / batch_size_;
}

MaskedBatch BatchStream::at(int64_t step) const {
  if (step < 0) throw std::invalid_argument("make_batches: negative step");
  const int64_t n = line_count();
  const int64_t bpe = batches_per_epoch();
  const int64_t epoch = step / bpe;
  const int64_t slot = step % bpe;

  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  Rng shuffle_rng = Rng::stream(seed_, rng_purpose::kShuffle, static_cast<uint64_t>(epoch));
  for (int64_t i = n - 1; i > 0; --i) {
    const int64_t j = shuffle_rng.uniform_int(i + 1);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }

  const int64_t begin = slot * batch_size_;
  const int64_t end = std::min(begin + batch_size_, n);
  const auto bsz = static_cast<int32_t>(end - begin);

  int32_t cols = 2;
  for (int64_t i = begin; i < end; ++i)
    cols = std::max(cols, attn_len_[static_cast<size_t>(order[static_cast<size_t>(i)])]);

  MaskedBatch batch;
  batch.input_ids = IdMat(bsz, cols, Vocabulary::kPad);
  batch.labels = IdMat(bsz, cols, -1);
  batch.mask_positions.resize(static_cast<size_t>(bsz));
  batch.attention_len.resize(static_cast<size_t>(bsz));

  Rng mask_rng = Rng::stream(seed_, rng_purpose::kMask, static_cast<uint64_t>(step));
  for (int32_t b = 0; b < bsz; ++b) {
    const int64_t line = order[static_cast<size_t>(begin + b)];
    std::vector<int32_t> ids(encoded_[static_cast<size_t>(line)].begin(),
                             encoded_[static_cast<size_t>(line)].begin() + cols);
    const int32_t alen = attn_len_[static_cast<size_t>(line)];
    std::vector<int32_t> labels, positions;
    apply_masking(ids, alen, mask_ratio_, policy_, vocab_, mask_rng, labels, positions);
    for (int32_t t = 0; t < cols; ++t) {
      batch.input_ids.at(b, t) = ids[static_cast<size_t>(t)];
      batch.labels.at(b, t) = labels[static_cast<size_t>(t)];
    }
    batch.mask_positions[static_cast<size_t>(b)] = std::move(positions);
    batch.attention_len[static_cast<size_t>(b)] = alen;
  }
  return batch;
}

}  // namespace truenet
