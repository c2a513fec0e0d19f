#pragma once

#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "ntrf/trf_model.hpp"

namespace ntrf {

struct Hypothesis {
  int index = 0;
  std::string text;
  std::optional<double> acoustic;
  std::optional<double> external_lm;
};

// utterance id -> hypotheses in file order.
struct NBestSet {
  std::map<std::string, std::vector<Hypothesis>> utterances;

  std::size_t hypothesis_count() const;
  void validate() const;
};

// Lines: `<utt_id> <hyp_index> [am=<float>] [lm=<float>] <token ...>`.
NBestSet read_nbest(std::istream& in);
NBestSet read_nbest_file(const std::string& path);

// Lines: `<utt_id> <token ...>`.
std::map<std::string, std::string> read_transcripts(std::istream& in);
std::map<std::string, std::string> read_transcripts_file(const std::string& path);
void write_transcripts(std::ostream& out, const std::map<std::string, std::string>& texts);

using ScoreKey = std::pair<std::string, int>;  // (utterance, hypothesis index)

// Natural-log scores per (utterance, hypothesis) and model column.
struct ScoreTable {
  std::vector<std::string> models;                     // column ids
  std::map<ScoreKey, std::vector<double>> scores;      // one entry per column
  std::vector<ScoreKey> unscorable;                    // -inf entries, reported

  // Column index by id; throws when absent.
  std::size_t column(const std::string& model_id) const;
  // The single score used for selection: "avg" if present, otherwise the
  // only column.
  double primary(const ScoreKey& key) const;
  std::string primary_column() const;
};

inline constexpr const char* kAverageColumn = "avg";
inline constexpr const char* kInterpolatedColumn = "interp";

// One column per model (named by `model_ids`) plus the average column.
ScoreTable rescore(const NBestSet& nbest, const std::vector<const TrfModel*>& models,
                   const std::vector<std::string>& model_ids, int workers = 1);

// weight * a + (1 - weight) * b over the primary columns.
ScoreTable interpolate(const ScoreTable& a, const ScoreTable& b, double weight);

// argmax of lm + acoustic_weight * am; ties go to the lowest index.
std::map<std::string, Hypothesis> select_best(const NBestSet& nbest, const ScoreTable& scores,
                                              double acoustic_weight);

struct WerReport {
  double wer = 0.0;
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t reference_words = 0;
  std::size_t errors() const { return substitutions + deletions + insertions; }
};

// Unit-cost Levenshtein alignment of one pair.
WerReport align_words(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);
WerReport wer(const std::map<std::string, std::string>& hyps, const std::map<std::string, std::string>& refs);

// CSV `utt_id,hyp_index,model_id,logprob`, preceded by a schema line.
void write_score_table(std::ostream& out, const ScoreTable& table);
ScoreTable read_score_table(std::istream& in);

}  // namespace ntrf
