// truenet — counter-false-negative MLM pre-training toolkit.
//
// Subcommands: build-vocab, build-synonyms, train, eval, audit, transform.
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "truenet/audit.hpp"
#include "truenet/checkpoint.hpp"
#include "truenet/logging.hpp"
#include "truenet/objectives.hpp"
#include "truenet/synonym.hpp"
#include "truenet/text.hpp"
#include "truenet/trainer.hpp"

namespace {

using truenet::SynonymTable;
using truenet::Vocabulary;

Vocabulary vocab_from_checkpoint(const std::string& path) {
  const auto blobs = truenet::read_container(path);
  return Vocabulary::deserialize(truenet::string_from_blob(truenet::find_blob(blobs, "__meta/vocab")));
}

}  // namespace

int main(int argc, char** argv) {
  truenet::init_log_level_from_env();

  CLI::App app{"counter-false-negative MLM pre-training toolkit"};
  app.require_subcommand(1);
  std::string log_level;
  app.add_option("--log-level", log_level, "debug|info|warn|error (also TRUENET_LOG)");

  // build-vocab
  auto* sc_vocab = app.add_subcommand("build-vocab", "build a frequency-ranked vocabulary from a corpus");
  std::string bv_corpus, bv_out;
  int bv_min_count = 1, bv_max_size = 50000;
  sc_vocab->add_option("--corpus", bv_corpus, "UTF-8 corpus, one sequence per line")->required();
  sc_vocab->add_option("--out", bv_out, "output vocabulary file")->required();
  sc_vocab->add_option("--min-count", bv_min_count, "minimum token frequency")->capture_default_str();
  sc_vocab->add_option("--max-size", bv_max_size, "maximum non-special vocabulary size")->capture_default_str();

  // build-synonyms
  auto* sc_syn = app.add_subcommand("build-synonyms", "build the synonym lookup table V");
  std::string bs_source, bs_vocab, bs_stopwords, bs_lexicon, bs_embeddings, bs_out;
  int bs_k = 10;
  bool bs_symmetrize = false;
  sc_syn->add_option("--source", bs_source, "lexicon|embedding")->required();
  sc_syn->add_option("--vocab", bs_vocab, "vocabulary file")->required();
  sc_syn->add_option("--stopwords", bs_stopwords, "stopword file, one word per line")->required();
  sc_syn->add_option("--lexicon", bs_lexicon, "TSV lexicon: word<TAB>syn1,syn2,...");
  sc_syn->add_option("--embeddings", bs_embeddings, "text embeddings: word v1 ... vd");
  sc_syn->add_option("--k", bs_k, "nearest neighbours for the embedding source")->capture_default_str();
  sc_syn->add_flag("--symmetrize", bs_symmetrize, "add reverse edges to lexicon entries");
  sc_syn->add_option("--out", bs_out, "output table file")->required();

  // train
  auto* sc_train = app.add_subcommand("train", "run the pre-training loop");
  std::string tr_config, tr_resume, tr_mode, tr_corpus, tr_vocab, tr_synonyms, tr_out_dir, tr_precision;
  int64_t tr_steps = -1;
  int tr_batch = -1;
  uint64_t tr_seed = 0;
  double tr_lr = -1;
  sc_train->add_option("--config", tr_config, "JSON config (flags override its fields)");
  sc_train->add_option("--resume", tr_resume, "checkpoint to resume from (ignores other flags)");
  sc_train->add_option("--mode", tr_mode, "mlm|hc|sr_word|sr_sent|electra|electra_hc|electra_sr");
  sc_train->add_option("--corpus", tr_corpus, "training corpus");
  sc_train->add_option("--vocab", tr_vocab, "vocabulary file");
  sc_train->add_option("--synonyms", tr_synonyms, "synonym table file");
  sc_train->add_option("--out-dir", tr_out_dir, "output directory");
  sc_train->add_option("--precision", tr_precision, "f64|f32");
  sc_train->add_option("--steps", tr_steps, "optimizer steps");
  sc_train->add_option("--batch-size", tr_batch, "sequences per step");
  sc_train->add_option("--learning-rate", tr_lr, "peak learning rate");
  auto* tr_seed_opt = sc_train->add_option("--seed", tr_seed, "run seed");

  // eval
  auto* sc_eval = app.add_subcommand("eval", "mask-fill evaluation of a checkpoint");
  std::string ev_ckpt, ev_corpus, ev_table;
  double ev_ratio = 0.15;
  uint64_t ev_seed = 1;
  sc_eval->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  sc_eval->add_option("--corpus", ev_corpus, "evaluation corpus")->required();
  sc_eval->add_option("--table", ev_table, "synonym table for synonym-credit accuracy");
  sc_eval->add_option("--mask-ratio", ev_ratio, "evaluation mask ratio")->capture_default_str();
  sc_eval->add_option("--seed", ev_seed, "masking seed")->capture_default_str();

  // audit
  auto* sc_audit = app.add_subcommand("audit", "correction-severity statistics for checkpoints");
  std::vector<std::string> au_ckpts;
  std::string au_corpus, au_table, au_dump;
  double au_ratio = 0.15;
  uint64_t au_seed = 1;
  sc_audit->add_option("--checkpoint", au_ckpts, "checkpoint file(s), one stats row each")->required();
  sc_audit->add_option("--corpus", au_corpus, "audit corpus")->required();
  sc_audit->add_option("--table", au_table, "synonym table")->required();
  sc_audit->add_option("--mask-ratio", au_ratio, "audit mask ratio")->capture_default_str();
  sc_audit->add_option("--seed", au_seed, "masking seed")->capture_default_str();
  sc_audit->add_option("--dump", au_dump, "TSV dump path (seq pos gold pred corrected)");

  // transform
  auto* sc_trans = app.add_subcommand("transform", "synonym-swap robustness transform");
  std::string tf_corpus, tf_table, tf_vocab, tf_out, tf_log;
  double tf_prob = 0.15;
  uint64_t tf_seed = 1;
  sc_trans->add_option("--corpus", tf_corpus, "input corpus")->required();
  sc_trans->add_option("--table", tf_table, "synonym table")->required();
  sc_trans->add_option("--vocab", tf_vocab, "vocabulary file")->required();
  sc_trans->add_option("--out", tf_out, "transformed corpus path")->required();
  sc_trans->add_option("--swap-prob", tf_prob, "replacement probability in (0,1]")->capture_default_str();
  sc_trans->add_option("--seed", tf_seed, "transform seed")->capture_default_str();
  sc_trans->add_option("--log", tf_log, "change-log TSV path (line pos old new)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  if (!log_level.empty()) truenet::set_log_level(log_level);

  try {
    if (*sc_vocab) {
      Vocabulary vocab = truenet::build_vocab(bv_corpus, bv_min_count, bv_max_size);
      vocab.save(bv_out);
      truenet::log_info("build-vocab: " + std::to_string(vocab.size()) + " ids (incl. 4 specials) -> " + bv_out);
      return 0;
    }
    if (*sc_syn) {
      Vocabulary vocab = Vocabulary::load(bs_vocab);
      SynonymTable table;
      if (bs_source == "lexicon") {
        if (bs_lexicon.empty()) throw std::invalid_argument("build-synonyms: --source lexicon needs --lexicon");
        table = truenet::build_from_lexicon(bs_lexicon, vocab, bs_stopwords, bs_symmetrize);
      } else if (bs_source == "embedding") {
        if (bs_embeddings.empty()) throw std::invalid_argument("build-synonyms: --source embedding needs --embeddings");
        table = truenet::build_from_embeddings(bs_embeddings, vocab, bs_stopwords, bs_k);
      } else {
        throw std::invalid_argument("build-synonyms: --source must be lexicon or embedding");
      }
      table.check_invariants();
      truenet::save_table(table, bs_out);
      const truenet::CoverageReport rep = truenet::coverage_stats(table, vocab);
      nlohmann::json j;
      j["coverage"] = rep.coverage;
      j["eligible_ids"] = rep.eligible_ids;
      j["covered_ids"] = rep.covered_ids;
      j["mean_entry_size"] = rep.mean_entry_size;
      j["max_entry_size"] = rep.max_entry_size;
      std::cout << j.dump() << "\n";
      return 0;
    }
    if (*sc_train) {
      if (!tr_resume.empty()) {
        truenet::TrainResult res = truenet::resume_training(tr_resume);
        std::cout << res.final_checkpoint << "\n";
        return 0;
      }
      truenet::TrainConfig cfg =
          tr_config.empty() ? truenet::TrainConfig{} : truenet::TrainConfig::from_json_file(tr_config);
      if (!tr_mode.empty()) cfg.mode = tr_mode;
      if (!tr_corpus.empty()) cfg.corpus = tr_corpus;
      if (!tr_vocab.empty()) cfg.vocab = tr_vocab;
      if (!tr_synonyms.empty()) cfg.synonyms = tr_synonyms;
      if (!tr_out_dir.empty()) cfg.out_dir = tr_out_dir;
      if (!tr_precision.empty()) cfg.precision = tr_precision;
      if (tr_steps >= 0) cfg.steps = tr_steps;
      if (tr_batch >= 0) cfg.batch_size = tr_batch;
      if (tr_lr > 0) cfg.learning_rate = tr_lr;
      if (tr_seed_opt->count() > 0) cfg.seed = tr_seed;
      truenet::TrainResult res = truenet::train(cfg);
      std::cout << res.final_checkpoint << "\n";
      return 0;
    }
    if (*sc_eval) {
      std::optional<SynonymTable> table;
      if (!ev_table.empty()) {
        Vocabulary vocab = vocab_from_checkpoint(ev_ckpt);
        table = truenet::load_table(ev_table, vocab);
      }
      const truenet::EvalMetrics m =
          truenet::evaluate_mask_fill(ev_ckpt, ev_corpus, table ? &*table : nullptr, ev_ratio, ev_seed);
      std::cout << m.to_json().dump() << "\n";
      return 0;
    }
    if (*sc_audit) {
      nlohmann::json rows = nlohmann::json::array();
      for (size_t i = 0; i < au_ckpts.size(); ++i) {
        Vocabulary vocab = vocab_from_checkpoint(au_ckpts[i]);
        SynonymTable table = truenet::load_table(au_table, vocab);
        const std::string dump = au_dump.empty() || au_ckpts.size() == 1
                                     ? au_dump
                                     : au_dump + "." + std::to_string(i);
        truenet::CorrectionStats stats =
            truenet::audit_checkpoint(au_ckpts[i], au_corpus, table, au_ratio, au_seed, dump);
        nlohmann::json row = stats.to_json();
        row["checkpoint"] = au_ckpts[i];
        rows.push_back(row);
      }
      std::cout << (rows.size() == 1 ? rows[0].dump() : rows.dump()) << "\n";
      return 0;
    }
    if (*sc_trans) {
      Vocabulary vocab = Vocabulary::load(tf_vocab);
      SynonymTable table = truenet::load_table(tf_table, vocab);
      const truenet::SwapResult res = truenet::swap_syn_transform(tf_corpus, tf_out, table, vocab, tf_prob, tf_seed);
      if (!tf_log.empty()) {
        std::ofstream log(tf_log, std::ios::trunc);
        if (!log) throw std::runtime_error("transform: cannot open '" + tf_log + "'");
        for (const auto& c : res.changes) log << c.line << '\t' << c.pos << '\t' << c.from << '\t' << c.to << '\n';
      }
      nlohmann::json j;
      j["lines"] = res.lines;
      j["eligible_tokens"] = res.eligible_tokens;
      j["changed_tokens"] = res.changed_tokens;
      std::cout << j.dump() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
