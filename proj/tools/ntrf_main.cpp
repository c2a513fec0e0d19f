// ntrf: train, sample, and evaluate neural trans-dimensional random field
// language models.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <json.hpp>

#include "ntrf/config.hpp"
#include "ntrf/errors.hpp"
#include "ntrf/eval_rescore.hpp"
#include "ntrf/logging.hpp"
#include "ntrf/numeric.hpp"
#include "ntrf/parallel.hpp"
#include "ntrf/sampler.hpp"
#include "ntrf/trainer.hpp"

namespace {

using namespace ntrf;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Output stream that is either a file or stdout.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw FormatError("cannot write " + path);
    }
  }
  std::ostream& get() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

std::vector<TokenSeq> read_sentences(const std::string& path, const Vocab& vocab, int max_length) {
  return CorpusStore::read_file(path, vocab, max_length).sentences();
}

std::vector<TokenSeq> read_sentences_unbounded(const std::string& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open corpus file " + path);
  std::vector<TokenSeq> out;
  std::string line;
  while (std::getline(in, line)) {
    auto words = split_whitespace(line);
    if (words.empty()) continue;
    TokenSeq x;
    for (const auto& w : words) x.push_back(vocab.id(w));
    out.push_back(std::move(x));
  }
  return out;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg;
  cfg.train.workers = 1;
  cfg.load_file(a.config);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(kv, "override '" + kv + "' is not key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.workers) cfg.train.workers = *a.workers;
  cfg.validate();
  if (cfg.train_corpus.empty()) throw ConfigError("train_corpus", "train_corpus is required");
  if (cfg.train.out_dir.empty()) throw ConfigError("out_dir", "out_dir is required");
  std::filesystem::create_directories(cfg.train.out_dir);

  Vocab vocab;
  if (!cfg.vocab_file.empty()) {
    vocab = Vocab::load(cfg.vocab_file);
  } else {
    std::ifstream in(cfg.train_corpus);
    if (!in) throw IngestionError("cannot open corpus file " + cfg.train_corpus);
    vocab = Vocab::build(in, cfg.vocab_size);
  }
  vocab.save(cfg.train.out_dir + "/vocab.txt");

  const CorpusStore train = CorpusStore::read_file(cfg.train_corpus, vocab, cfg.max_length);
  CorpusStore dev;
  if (!cfg.dev_corpus.empty()) dev = CorpusStore::read_file(cfg.dev_corpus, vocab, cfg.max_length);
  if (cfg.train.log_csv.empty()) cfg.train.log_csv = cfg.train.out_dir + "/train_log.csv";

  Rng init_rng(cfg.train.seed);
  TrfModel model = make_initial_model(vocab, train, cfg.potential, cfg.train.length_floor, cfg.train.init_bound, init_rng);
  if (!cfg.embedding_file.empty()) {
    const auto n = import_embeddings(cfg.embedding_file, vocab, model.theta);
    spdlog::info("imported {} embeddings from {}", n, cfg.embedding_file);
    model.refresh_log_z1();
  }
  Proposal proposal(cfg.proposal, static_cast<int>(vocab.size()));
  proposal.init_uniform(cfg.train.init_bound, init_rng);

  Trainer trainer(cfg.train, train, dev.empty() ? nullptr : &dev, model, proposal);
  TrainResult result = trainer.run([](const IterationStats& s, const Trainer&) {
    if (s.dev_ll_smoothed) spdlog::debug("t={} dev_ll_smoothed={}", s.iteration, *s.dev_ll_smoothed);
  });
  const std::string final_path = cfg.train.out_dir + "/model.ntrf";
  save_model_bundle(final_path, model, proposal);

  std::cout << "iterations " << result.iterations << '\n';
  std::cout << "early_stopped " << (result.early_stopped ? 1 : 0) << '\n';
  std::cout << "model " << final_path << '\n';
  for (const auto& p : result.checkpoint_paths) std::cout << "checkpoint " << p << '\n';
  return 0;
}

int cmd_ppl(const std::string& model_path, const std::string& test_path, int workers) {
  const TrfModel model = TrfModel::load(model_path);
  const auto test = read_sentences_unbounded(test_path, model.vocab);
  const PerplexityReport r = perplexity(test, model, workers);
  // The normalization constants are stochastic estimates, so this PPL is too.
  std::cout << "ppl_estimate " << format_double(r.ppl) << '\n'
            << "tokens " << r.tokens << '\n'
            << "sentences " << r.sentences << '\n'
            << "excluded " << r.excluded << '\n'
            << "logprob " << format_double(r.total_logprob) << '\n';
  return 0;
}

int cmd_score_aux(const std::string& model_path, const std::string& test_path, bool per_sentence) {
  const TrfModel model = TrfModel::load(model_path);
  const Proposal mu = load_proposal(model_path);
  const auto test = read_sentences_unbounded(test_path, model.vocab);
  if (test.empty()) throw IngestionError("test corpus is empty");
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& x : test) {
    const double lp = q_logprob(x, mu);
    if (per_sentence) std::cout << "sentence " << format_double(lp) << '\n';
    total += lp;
    tokens += x.size();
  }
  std::cout << "ppl " << format_double(std::exp(-total / static_cast<double>(tokens))) << '\n'
            << "tokens " << tokens << '\n'
            << "sentences " << test.size() << '\n'
            << "logprob " << format_double(total) << '\n';
  return 0;
}

struct SampleArgs {
  std::string model;
  std::size_t count = 0;
  std::uint64_t seed = 1;
  std::size_t burn_in = 100;
  std::size_t thin = 1;
  JumpConfig jump;
  std::string out;
};

int cmd_sample(const SampleArgs& a) {
  a.jump.validate();
  if (a.thin < 1) throw ConfigError("thin", "thin must be at least 1");
  const TrfModel model = TrfModel::load(a.model);
  const Proposal mu = load_proposal(a.model);
  Output out(a.out);
  if (a.count == 0) return 0;

  Rng init(a.seed);
  std::discrete_distribution<int> length_dist(model.pi0.probs().begin(), model.pi0.probs().end());
  const int l = length_dist(init) + 1;
  auto [x, lp] = g_sample({}, l, mu, model.max_length(), init);
  ChainState chain = make_chain(std::move(x), model, a.seed ^ 0x9e3779b97f4a7c15ull);
  for (std::size_t i = 0; i < a.burn_in; ++i) transms_step(chain, model, mu, a.jump);
  for (std::size_t n = 0; n < a.count; ++n) {
    for (std::size_t k = 0; k < a.thin; ++k) transms_step(chain, model, mu, a.jump);
    nlohmann::ordered_json rec;
    rec["v"] = 1;
    rec["length"] = chain.length();
    std::vector<std::string> toks;
    for (TokenId t : chain.x) toks.push_back(model.vocab.token(t));
    rec["tokens"] = toks;
    rec["log_phi"] = chain.log_phi;
    rec["accepted_jump"] = chain.last_jump_accepted;
    rec["accepted_moves"] = chain.last_move_accepts;
    out.get() << rec.dump() << '\n';
  }
  return 0;
}

struct RescoreArgs {
  std::vector<std::string> models;
  std::string nbest;
  std::string out;
  std::string select_out;
  std::string ref;
  double am_weight = 0.0;
  int workers = 1;
};

void report_selection(const NBestSet& nbest, const ScoreTable& table, double am_weight, const std::string& select_out,
                      const std::string& ref) {
  if (select_out.empty() && ref.empty()) return;
  const auto best = select_best(nbest, table, am_weight);
  std::map<std::string, std::string> texts;
  for (const auto& [utt, h] : best) texts[utt] = h.text;
  if (!select_out.empty()) {
    Output o(select_out);
    write_transcripts(o.get(), texts);
  }
  if (!ref.empty()) {
    const WerReport r = wer(texts, read_transcripts_file(ref));
    std::cout << "wer " << format_double(r.wer) << '\n';
  }
}

int cmd_rescore(const RescoreArgs& a) {
  const NBestSet nbest = read_nbest_file(a.nbest);
  std::vector<TrfModel> models;
  models.reserve(a.models.size());
  for (const auto& p : a.models) models.push_back(TrfModel::load(p));
  std::vector<const TrfModel*> ptrs;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < models.size(); ++i) {
    ptrs.push_back(&models[i]);
    ids.push_back("m" + std::to_string(i));
  }
  const ScoreTable table = rescore(nbest, ptrs, ids, a.workers);
  {
    Output o(a.out);
    write_score_table(o.get(), table);
  }
  report_selection(nbest, table, a.am_weight, a.select_out, a.ref);
  return 0;
}

struct InterpArgs {
  std::string a, b, out, nbest, select_out, ref;
  double weight = 0.5;
  double am_weight = 0.0;
};

int cmd_interpolate(const InterpArgs& a) {
  std::ifstream ia(a.a), ib(a.b);
  if (!ia) throw FormatError("cannot open " + a.a);
  if (!ib) throw FormatError("cannot open " + a.b);
  const ScoreTable t = interpolate(read_score_table(ia), read_score_table(ib), a.weight);
  {
    Output o(a.out);
    write_score_table(o.get(), t);
  }
  if (!a.nbest.empty()) report_selection(read_nbest_file(a.nbest), t, a.am_weight, a.select_out, a.ref);
  return 0;
}

int cmd_wer(const std::string& hyp, const std::string& ref) {
  const WerReport r = wer(read_transcripts_file(hyp), read_transcripts_file(ref));
  std::cout << "wer " << format_double(r.wer) << '\n'
            << "substitutions " << r.substitutions << '\n'
            << "deletions " << r.deletions << '\n'
            << "insertions " << r.insertions << '\n'
            << "reference_words " << r.reference_words << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"Neural trans-dimensional random field language models"};
  app.require_subcommand(1);
  std::uint64_t seed = 1;
  int workers = 1;

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("config", train_args.config, "run config file")->required();
  train->add_option("--set", train_args.overrides, "override a config entry, key=value (repeatable)");
  auto* train_seed = train->add_option("--seed", seed, "random seed");
  auto* train_workers = train->add_option("--workers", workers, "worker threads");

  std::string model_path, test_path;
  auto* ppl = app.add_subcommand("ppl", "estimated per-word perplexity of a test corpus");
  ppl->add_option("--model", model_path, "model file")->required();
  ppl->add_option("--test", test_path, "test corpus")->required();
  ppl->add_option("--seed", seed, "random seed (unused; scoring is deterministic)");
  ppl->add_option("--workers", workers, "worker threads");

  bool per_sentence = false;
  auto* aux = app.add_subcommand("score-aux", "score a corpus with the auxiliary autoregressive model");
  aux->add_option("--model", model_path, "model file")->required();
  aux->add_option("--test", test_path, "test corpus")->required();
  aux->add_flag("--per-sentence", per_sentence, "print every sentence log-probability");
  aux->add_option("--seed", seed, "random seed (unused; scoring is deterministic)");

  SampleArgs sample_args;
  auto* sample = app.add_subcommand("sample", "draw sentences with the trans-dimensional sampler (JSONL)");
  sample->add_option("--model", sample_args.model, "model file")->required();
  sample->add_option("--count", sample_args.count, "number of samples")->required();
  sample->add_option("--seed", sample_args.seed, "random seed");
  sample->add_option("--burn-in", sample_args.burn_in, "sampler steps discarded first");
  sample->add_option("--thin", sample_args.thin, "sampler steps per emitted sample");
  sample->add_option("--jump-range", sample_args.jump.range, "local jump range r");
  sample->add_option("--block-size", sample_args.jump.block, "Markov move block size s");
  sample->add_option("--trials", sample_args.jump.trials, "multiple-trial count M");
  sample->add_option("--out", sample_args.out, "output file (default stdout)");

  RescoreArgs rescore_args;
  auto* rescore_cmd = app.add_subcommand("rescore", "score n-best lists, averaging over models");
  rescore_cmd->add_option("--model", rescore_args.models, "model file (repeatable)")->required();
  rescore_cmd->add_option("--nbest", rescore_args.nbest, "n-best file")->required();
  rescore_cmd->add_option("--out", rescore_args.out, "score table CSV (default stdout)");
  rescore_cmd->add_option("--select-out", rescore_args.select_out, "write the selected hypotheses here");
  rescore_cmd->add_option("--ref", rescore_args.ref, "reference transcripts; prints the WER of the selection");
  rescore_cmd->add_option("--am-weight", rescore_args.am_weight, "acoustic score weight");
  rescore_cmd->add_option("--seed", seed, "random seed (unused; scoring is deterministic)");
  rescore_cmd->add_option("--workers", rescore_args.workers, "worker threads");

  InterpArgs interp_args;
  auto* interp = app.add_subcommand("interpolate", "log-linear interpolation of two score tables");
  interp->add_option("--a", interp_args.a, "first score table")->required();
  interp->add_option("--b", interp_args.b, "second score table")->required();
  interp->add_option("--weight", interp_args.weight, "weight of the first table");
  interp->add_option("--out", interp_args.out, "interpolated table (default stdout)");
  interp->add_option("--nbest", interp_args.nbest, "n-best file for selection");
  interp->add_option("--select-out", interp_args.select_out, "write the selected hypotheses here");
  interp->add_option("--ref", interp_args.ref, "reference transcripts; prints the WER of the selection");
  interp->add_option("--am-weight", interp_args.am_weight, "acoustic score weight");
  interp->add_option("--seed", seed, "random seed (unused)");

  std::string hyp_path, ref_path;
  auto* wer_cmd = app.add_subcommand("wer", "word error rate of hypotheses against references");
  wer_cmd->add_option("--hyp", hyp_path, "hypothesis transcripts")->required();
  wer_cmd->add_option("--ref", ref_path, "reference transcripts")->required();
  wer_cmd->add_option("--seed", seed, "random seed (unused)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) {
      if (*train_seed) train_args.seed = seed;
      if (*train_workers) train_args.workers = workers;
      return cmd_train(train_args);
    }
    if (*ppl) return cmd_ppl(model_path, test_path, workers);
    if (*aux) return cmd_score_aux(model_path, test_path, per_sentence);
    if (*sample) return cmd_sample(sample_args);
    if (*rescore_cmd) return cmd_rescore(rescore_args);
    if (*interp) return cmd_interpolate(interp_args);
    if (*wer_cmd) return cmd_wer(hyp_path, ref_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
