#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "support/synthetic.hpp"
#include "truenet/audit.hpp"

using namespace truenet;
using namespace truenet::testsupport;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = std::string(TRUENET_SOURCE_DIR) + "/tests/fixtures";
const std::string kStopwords = std::string(TRUENET_SOURCE_DIR) + "/data/stopwords_en.txt";

std::string fresh_dir(const std::string& tag) {
  static int counter = 0;
  const std::string dir = "/tmp/truenet_audit_" + tag + "_" + std::to_string(++counter);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Vocabulary fixture_vocab() {
  return Vocabulary::from_tokens({"primary", "main", "chief", "happy", "glad", "stay", "remain", "fast", "quick",
                                  "speedy", "you", "the", "zzz"});
}

// standalone recount: reads the dump TSV and the serialized table with its
// own parsing, recomputes every counter from the (gold, pred) pairs
CorrectionStats recount_from_dump(const std::string& tsv_path, const std::string& table_path,
                                  int64_t total_sequences) {
  std::map<int32_t, std::set<int32_t>> table;
  std::ifstream tf(table_path);
  std::string line;
  std::getline(tf, line);  // header
  while (std::getline(tf, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    const int32_t id = std::stoi(line.substr(0, tab));
    std::istringstream rest(line.substr(tab + 1));
    std::string part;
    while (std::getline(rest, part, ',')) table[id].insert(std::stoi(part));
  }

  CorrectionStats stats;
  stats.total_sequences = total_sequences;
  std::set<int64_t> correcting_seqs;
  std::ifstream f(tsv_path);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    int64_t seq;
    int32_t pos, gold, pred, corrected;
    is >> seq >> pos >> gold >> pred >> corrected;
    ++stats.total_masked_predictions;
    if (pred != gold) ++stats.mismatched_predictions;
    const bool want = pred != gold && table.count(gold) > 0 && table.at(gold).count(pred) > 0;
    REQUIRE(static_cast<int>(want) == corrected);  // dumped flag must agree
    if (want) {
      ++stats.corrected_predictions;
      correcting_seqs.insert(seq);
    }
  }
  stats.sequences_with_correction = static_cast<int64_t>(correcting_seqs.size());
  return stats;
}

}  // namespace

TEST_CASE("correction stats: identities and percentage definitions") {
  CorrectionStats s;
  s.total_sequences = 50;
  s.sequences_with_correction = 4;
  s.total_masked_predictions = 200;
  s.mismatched_predictions = 80;
  s.corrected_predictions = 5;
  s.check_identities();
  CHECK(s.iteration_level_pct() == doctest::Approx(8.0));
  CHECK(s.prediction_level_pct_of_mismatched() == doctest::Approx(6.25));
  CHECK(s.prediction_level_pct_of_masked() == doctest::Approx(2.5));

  CorrectionStats broken = s;
  broken.corrected_predictions = 81;
  CHECK_THROWS_AS(broken.check_identities(), std::logic_error);
}

TEST_CASE("audit with a rigged model matches the standalone recount exactly") {
  Vocabulary vocab = fixture_vocab();
  SynonymTable table = build_from_lexicon(kFixtures + "/lexicon_small.tsv", vocab, kStopwords);
  const std::string dir = fresh_dir("recount");
  const std::string table_path = dir + "/table.tsv";
  save_table(table, table_path);

  // rigged deterministic model: always predicts "main"
  const int32_t main_id = vocab.lookup("main");
  Predictor constant = [main_id](const MaskedBatch& batch) {
    return std::vector<int32_t>(static_cast<size_t>(batch.masked_total()), main_id);
  };

  const std::string corpus = kFixtures + "/audit_sentences.txt";
  const std::string dump = dir + "/dump.tsv";
  CorrectionStats stats = audit(constant, corpus, vocab, table, 0.25, 12345, 16, dump);

  CHECK(stats.total_sequences == 50);
  CHECK(stats.total_masked_predictions > 0);
  CHECK(stats.corrected_predictions > 0);  // gold "primary" with prediction "main"

  CorrectionStats recounted = recount_from_dump(dump, table_path, 50);
  CHECK(stats == recounted);

  // a model that always predicts gold produces zero correction counts
  Predictor oracle_gold = [](const MaskedBatch& batch) {
    std::vector<int32_t> preds;
    for (int32_t b = 0; b < batch.rows(); ++b)
      for (int32_t t : batch.mask_positions[static_cast<size_t>(b)]) preds.push_back(batch.labels.at(b, t));
    return preds;
  };
  CorrectionStats zero = audit(oracle_gold, corpus, vocab, table, 0.25, 12345, 16);
  CHECK(zero.corrected_predictions == 0);
  CHECK(zero.mismatched_predictions == 0);
  CHECK(zero.sequences_with_correction == 0);

  // determinism: identical inputs give identical stats
  CorrectionStats stats2 = audit(constant, corpus, vocab, table, 0.25, 12345, 16);
  CHECK(stats == stats2);
}

TEST_CASE("swap transform: eligibility, counts, rate, change log") {
  Vocabulary vocab = fixture_vocab();
  SynonymTable table = build_from_lexicon(kFixtures + "/lexicon_small.tsv", vocab, kStopwords);
  const std::string dir = fresh_dir("swap");

  // long fixture: >= 1e5 eligible tokens
  const std::string corpus = dir + "/corpus.txt";
  {
    std::ofstream f(corpus);
    for (int i = 0; i < 12500; ++i) f << "primary zzz fast the happy quick stay you\n";
  }
  const std::string out = dir + "/out.txt";
  const double prob = 0.3;
  SwapResult res = swap_syn_transform(corpus, out, table, vocab, prob, 77);

  CHECK(res.lines == 12500);
  // eligible per line: primary, fast, happy, quick, stay (zzz/the/you have no entries)
  CHECK(res.eligible_tokens == 12500 * 5);
  const double sigma = std::sqrt(prob * (1 - prob) / static_cast<double>(res.eligible_tokens));
  const double rate = static_cast<double>(res.changed_tokens) / static_cast<double>(res.eligible_tokens);
  CHECK(std::fabs(rate - prob) <= 3 * sigma);

  // line and per-line token counts preserved; ineligible tokens untouched
  const std::vector<std::string> orig = read_lines(corpus);
  const std::vector<std::string> trans = read_lines(out);
  REQUIRE(orig.size() == trans.size());
  for (size_t i = 0; i < 100; ++i) {
    const auto to = tokenize(orig[i]);
    const auto tt = tokenize(trans[i]);
    REQUIRE(to.size() == tt.size());
    CHECK(tt[1] == "zzz");
    CHECK(tt[3] == "the");
    CHECK(tt[7] == "you");
    for (size_t t = 0; t < to.size(); ++t)
      if (to[t] != tt[t]) CHECK(table.contains(vocab.lookup(to[t]), vocab.lookup(tt[t])));
  }

  // change log matches the diff between the corpora
  for (const SwapChange& c : res.changes) {
    const auto before = tokenize(orig[static_cast<size_t>(c.line)]);
    const auto after = tokenize(trans[static_cast<size_t>(c.line)]);
    CHECK(before[static_cast<size_t>(c.pos)] == c.from);
    CHECK(after[static_cast<size_t>(c.pos)] == c.to);
  }

  CHECK_THROWS_AS(swap_syn_transform(corpus, out, table, vocab, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(swap_syn_transform(corpus, out, table, vocab, 1.5, 1), std::invalid_argument);
}

TEST_CASE("robustness delta: identity transform gives exactly zero deltas") {
  SyntheticCorpus sc = make_synonym_corpus(fresh_dir("robust"), 200, 40, 4, 5);
  TrainConfig cfg;
  cfg.mode = "mlm";
  cfg.layers = 1;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.max_len = 8;
  cfg.batch_size = 8;
  cfg.steps = 30;
  cfg.seed = 2;
  cfg.corpus = sc.corpus_path;
  cfg.vocab = sc.vocab_path;
  cfg.out_dir = sc.dir + "/out";
  TrainResult r = train(cfg);

  Vocabulary vocab = Vocabulary::load(sc.vocab_path);
  SynonymTable table = load_table(sc.table_path, vocab);

  // identity: evaluating the same file on both sides
  RobustnessReport rep = robustness_delta(r.final_checkpoint, sc.eval_path, sc.eval_path, &table, 0.2, 9);
  CHECK(rep.delta_exact_match == 0.0);
  CHECK(rep.delta_synonym_credit == 0.0);
  CHECK(rep.delta_mean_loss == 0.0);

  // a transformed corpus with a different line count is rejected
  const std::string shorter = sc.dir + "/short.txt";
  {
    std::ofstream f(shorter);
    f << "actx0 bctx0 syn0a cctx0 dctx0\n";
  }
  CHECK_THROWS_AS(robustness_delta(r.final_checkpoint, sc.eval_path, shorter, &table, 0.2, 9), std::invalid_argument);
}

TEST_CASE("robustness delta matches a hand computation when swaps hit exactly the masked slots") {
  SyntheticCorpus sc = make_synonym_corpus(fresh_dir("handdelta"), 300, 10, 4, 21);
  TrainConfig cfg;
  cfg.mode = "mlm";
  cfg.layers = 1;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.max_len = 8;
  cfg.batch_size = 8;
  cfg.steps = 40;
  cfg.seed = 4;
  cfg.corpus = sc.corpus_path;
  cfg.vocab = sc.vocab_path;
  cfg.out_dir = sc.dir + "/out";
  TrainResult r = train(cfg);

  Vocabulary vocab = Vocabulary::load(sc.vocab_path);
  SynonymTable table = load_table(sc.table_path, vocab);
  const uint64_t eval_seed = 31;
  const double ratio = 0.2;

  // build the transformed corpus by swapping tokens at exactly the positions
  // the deterministic eval masking will select (when they have synonyms)
  std::vector<std::string> lines = read_lines(sc.eval_path);
  std::vector<std::string> transformed = lines;
  const auto batches = deterministic_eval_batches(lines, vocab, cfg.max_len, ratio, eval_seed);
  for (const EvalBatch& eb : batches)
    for (int32_t b = 0; b < eb.batch.rows(); ++b)
      for (int32_t t : eb.batch.mask_positions[static_cast<size_t>(b)]) {
        const int64_t line = eb.lines[static_cast<size_t>(b)];
        auto tokens = tokenize(transformed[static_cast<size_t>(line)]);
        const int32_t id = vocab.lookup(tokens[static_cast<size_t>(t - 1)]);  // position 0 is [CLS]
        if (table.empty_entry(id)) continue;
        tokens[static_cast<size_t>(t - 1)] = vocab.token(table.entry(id)[0]);
        std::string joined;
        for (size_t k = 0; k < tokens.size(); ++k) joined += (k ? " " : "") + tokens[k];
        transformed[static_cast<size_t>(line)] = joined;
      }
  const std::string trans_path = sc.dir + "/trans.txt";
  {
    std::ofstream f(trans_path);
    for (const std::string& l : transformed) f << l << '\n';
  }

  // predictions are identical on both sides (contexts agree), so expected
  // deltas follow from one prediction pass plus the swapped golds
  MaskFiller filler(r.final_checkpoint);
  int64_t n = 0, exact_orig = 0, exact_trans = 0, credit_orig = 0, credit_trans = 0;
  const auto trans_batches = deterministic_eval_batches(transformed, vocab, cfg.max_len, ratio, eval_seed);
  for (size_t bi = 0; bi < batches.size(); ++bi) {
    const MaskFiller::Out out = filler.fill(batches[bi].batch);
    size_t i = 0;
    for (int32_t b = 0; b < batches[bi].batch.rows(); ++b)
      for (int32_t t : batches[bi].batch.mask_positions[static_cast<size_t>(b)]) {
        const int32_t gold_o = batches[bi].batch.labels.at(b, t);
        const int32_t gold_t = trans_batches[bi].batch.labels.at(b, t);
        const int32_t pred = out.preds[i++];
        ++n;
        exact_orig += pred == gold_o;
        exact_trans += pred == gold_t;
        credit_orig += (pred == gold_o || table.contains(gold_o, pred));
        credit_trans += (pred == gold_t || table.contains(gold_t, pred));
      }
  }
  REQUIRE(n > 0);
  const double want_delta_exact = (exact_trans - exact_orig) / static_cast<double>(n);
  const double want_delta_credit = (credit_trans - credit_orig) / static_cast<double>(n);

  RobustnessReport rep = robustness_delta(r.final_checkpoint, sc.eval_path, trans_path, &table, ratio, eval_seed);
  CHECK(rep.delta_exact_match == doctest::Approx(want_delta_exact).epsilon(1e-12));
  CHECK(rep.delta_synonym_credit == doctest::Approx(want_delta_credit).epsilon(1e-12));
  CHECK(rep.original.masked == n);
}
