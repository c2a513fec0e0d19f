#include "ntrf/eval_rescore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ntrf/errors.hpp"
#include "ntrf/logging.hpp"
#include "ntrf/numeric.hpp"
#include "ntrf/parallel.hpp"

namespace ntrf {

std::size_t NBestSet::hypothesis_count() const {
  std::size_t n = 0;
  for (const auto& [utt, hyps] : utterances) n += hyps.size();
  return n;
}

void NBestSet::validate() const {
  if (utterances.empty()) throw FormatError("n-best set is empty");
  for (const auto& [utt, hyps] : utterances) {
    if (hyps.empty()) throw FormatError("utterance " + utt + " has no hypotheses");
    std::set<int> seen;
    for (const auto& h : hyps) {
      if (!seen.insert(h.index).second) {
        throw FormatError("duplicate hypothesis index " + std::to_string(h.index) + " in utterance " + utt);
      }
    }
  }
}

namespace {

double parse_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw FormatError("malformed " + what + " '" + s + "'");
  }
  if (used != s.size()) throw FormatError("malformed " + what + " '" + s + "'");
  return v;
}

int parse_int(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    throw FormatError("malformed " + what + " '" + s + "'");
  }
  if (used != s.size()) throw FormatError("malformed " + what + " '" + s + "'");
  return v;
}

std::string join(const std::vector<std::string>& words, std::size_t from) {
  std::string out;
  for (std::size_t i = from; i < words.size(); ++i) {
    if (i > from) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace

NBestSet read_nbest(std::istream& in) {
  NBestSet set;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto f = split_whitespace(line);
    if (f.empty()) continue;
    if (f.size() < 2) throw FormatError("n-best line " + std::to_string(lineno) + " lacks a hypothesis index");
    Hypothesis h;
    h.index = parse_int(f[1], "hypothesis index");
    std::size_t pos = 2;
    while (pos < f.size() && (f[pos].rfind("am=", 0) == 0 || f[pos].rfind("lm=", 0) == 0)) {
      const double v = parse_double(f[pos].substr(3), "score");
      (f[pos][0] == 'a' ? h.acoustic : h.external_lm) = v;
      ++pos;
    }
    h.text = join(f, pos);
    set.utterances[f[0]].push_back(std::move(h));
  }
  set.validate();
  return set;
}

NBestSet read_nbest_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open n-best file " + path);
  return read_nbest(in);
}

std::map<std::string, std::string> read_transcripts(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto f = split_whitespace(line);
    if (f.empty()) continue;
    if (!out.emplace(f[0], join(f, 1)).second) throw FormatError("duplicate utterance id " + f[0]);
  }
  return out;
}

std::map<std::string, std::string> read_transcripts_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open transcript file " + path);
  return read_transcripts(in);
}

void write_transcripts(std::ostream& out, const std::map<std::string, std::string>& texts) {
  for (const auto& [utt, text] : texts) {
    out << utt;
    if (!text.empty()) out << ' ' << text;
    out << '\n';
  }
}

std::size_t ScoreTable::column(const std::string& model_id) const {
  auto it = std::find(models.begin(), models.end(), model_id);
  if (it == models.end()) throw FormatError("score table has no column '" + model_id + "'");
  return static_cast<std::size_t>(it - models.begin());
}

std::string ScoreTable::primary_column() const {
  for (const char* name : {kAverageColumn, kInterpolatedColumn}) {
    if (std::find(models.begin(), models.end(), name) != models.end()) return name;
  }
  if (models.size() == 1) return models[0];
  throw FormatError("score table has several columns and no average");
}

double ScoreTable::primary(const ScoreKey& key) const {
  auto it = scores.find(key);
  if (it == scores.end()) {
    throw FormatError("missing score for " + key.first + " hypothesis " + std::to_string(key.second));
  }
  return it->second[column(primary_column())];
}

ScoreTable rescore(const NBestSet& nbest, const std::vector<const TrfModel*>& models,
                   const std::vector<std::string>& model_ids, int workers) {
  if (models.empty()) throw DomainError("rescoring needs at least one model");
  if (model_ids.size() != models.size()) throw DomainError("one id per model is required");
  nbest.validate();

  std::vector<std::pair<ScoreKey, const Hypothesis*>> items;
  for (const auto& [utt, hyps] : nbest.utterances) {
    for (const auto& h : hyps) items.push_back({{utt, h.index}, &h});
  }
  std::vector<std::vector<double>> rows(items.size(), std::vector<double>(models.size() + 1, kNegInf));
  parallel_chunks(items.size(), workers, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto words = split_whitespace(items[i].second->text);
      double sum = 0.0;
      for (std::size_t k = 0; k < models.size(); ++k) {
        const TrfModel& m = *models[k];
        double s = kNegInf;
        if (!words.empty() && static_cast<int>(words.size()) <= m.max_length()) {
          TokenSeq x;
          x.reserve(words.size());
          for (const auto& w : words) x.push_back(m.vocab.id(w));
          s = sentence_logprob(x, m);
        }
        rows[i][k] = s;
        sum += s;
      }
      rows[i][models.size()] = sum / static_cast<double>(models.size());
    }
  });

  ScoreTable table;
  table.models = model_ids;
  table.models.push_back(kAverageColumn);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (rows[i].back() == kNegInf) table.unscorable.push_back(items[i].first);
    table.scores.emplace(items[i].first, std::move(rows[i]));
  }
  if (!table.unscorable.empty()) {
    spdlog::warn("{} hypotheses could not be scored (empty, too long, or zero-prior length)", table.unscorable.size());
  }
  return table;
}

ScoreTable interpolate(const ScoreTable& a, const ScoreTable& b, double weight) {
  if (!(weight >= 0.0 && weight <= 1.0)) throw DomainError("interpolation weight must be in [0, 1]");
  if (a.scores.size() != b.scores.size()) throw FormatError("score tables cover different hypotheses");
  const std::size_t ca = a.column(a.primary_column());
  const std::size_t cb = b.column(b.primary_column());
  ScoreTable out;
  out.models = {kInterpolatedColumn};
  for (const auto& [key, row] : a.scores) {
    auto it = b.scores.find(key);
    if (it == b.scores.end()) throw FormatError("score tables cover different hypotheses");
    const double sa = row[ca];
    const double sb = it->second[cb];
    // Exact endpoints so weight 0 / 1 reproduce the input even for -inf.
    double s;
    if (weight == 1.0) {
      s = sa;
    } else if (weight == 0.0) {
      s = sb;
    } else {
      s = weight * sa + (1.0 - weight) * sb;
    }
    if (s == kNegInf) out.unscorable.push_back(key);
    out.scores.emplace(key, std::vector<double>{s});
  }
  return out;
}

std::map<std::string, Hypothesis> select_best(const NBestSet& nbest, const ScoreTable& scores,
                                              double acoustic_weight) {
  const std::size_t col = scores.column(scores.primary_column());
  std::map<std::string, Hypothesis> out;
  for (const auto& [utt, hyps] : nbest.utterances) {
    const Hypothesis* best = nullptr;
    double best_score = 0.0;
    for (const auto& h : hyps) {
      auto it = scores.scores.find({utt, h.index});
      if (it == scores.scores.end()) {
        throw FormatError("missing score for " + utt + " hypothesis " + std::to_string(h.index));
      }
      double s = it->second[col];
      if (h.acoustic && acoustic_weight != 0.0) s += acoustic_weight * *h.acoustic;
      if (!best || s > best_score || (s == best_score && h.index < best->index)) {
        best = &h;
        best_score = s;
      }
    }
    out.emplace(utt, *best);
  }
  return out;
}

WerReport align_words(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  const std::size_t n = ref.size();
  const std::size_t k = hyp.size();
  // cost[i][j]: edit distance between ref[:i] and hyp[:j].
  std::vector<std::vector<std::size_t>> cost(n + 1, std::vector<std::size_t>(k + 1));
  for (std::size_t i = 0; i <= n; ++i) cost[i][0] = i;
  for (std::size_t j = 0; j <= k; ++j) cost[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= k; ++j) {
      const std::size_t diag = cost[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cost[i][j] = std::min({diag, cost[i - 1][j] + 1, cost[i][j - 1] + 1});
    }
  }
  WerReport r;
  r.reference_words = n;
  std::size_t i = n, j = k;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && cost[i][j] == cost[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++r.substitutions;
      --i;
      --j;
    } else if (i > 0 && cost[i][j] == cost[i - 1][j] + 1) {
      ++r.deletions;
      --i;
    } else {
      ++r.insertions;
      --j;
    }
  }
  r.wer = n ? static_cast<double>(r.errors()) / static_cast<double>(n) : 0.0;
  return r;
}

WerReport wer(const std::map<std::string, std::string>& hyps, const std::map<std::string, std::string>& refs) {
  if (refs.empty()) throw FormatError("reference set is empty");
  for (const auto& [utt, text] : hyps) {
    if (!refs.count(utt)) throw FormatError("hypothesis for unknown utterance " + utt);
  }
  WerReport total;
  for (const auto& [utt, ref_text] : refs) {
    auto it = hyps.find(utt);
    if (it == hyps.end()) throw FormatError("missing hypothesis for utterance " + utt);
    const WerReport r = align_words(split_whitespace(ref_text), split_whitespace(it->second));
    total.substitutions += r.substitutions;
    total.deletions += r.deletions;
    total.insertions += r.insertions;
    total.reference_words += r.reference_words;
  }
  if (total.reference_words == 0) throw FormatError("references contain no words");
  total.wer = static_cast<double>(total.errors()) / static_cast<double>(total.reference_words);
  return total;
}

void write_score_table(std::ostream& out, const ScoreTable& table) {
  out << "# ntrf-scores v1\n";
  out << "utt_id,hyp_index,model_id,logprob\n";
  for (const auto& [key, row] : table.scores) {
    for (std::size_t c = 0; c < table.models.size(); ++c) {
      out << key.first << ',' << key.second << ',' << table.models[c] << ',' << format_double(row[c]) << '\n';
    }
  }
}

ScoreTable read_score_table(std::istream& in) {
  ScoreTable t;
  std::map<ScoreKey, std::map<std::string, double>> cells;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "utt_id,hyp_index,model_id,logprob") throw FormatError("unexpected score table header: " + line);
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 4) throw FormatError("malformed score table row: " + line);
    const ScoreKey key{f[0], parse_int(f[1], "hypothesis index")};
    const double v = f[3] == "-inf" ? kNegInf : parse_double(f[3], "log probability");
    if (std::find(t.models.begin(), t.models.end(), f[2]) == t.models.end()) t.models.push_back(f[2]);
    cells[key][f[2]] = v;
  }
  for (auto& [key, by_model] : cells) {
    std::vector<double> row;
    for (const auto& m : t.models) {
      auto it = by_model.find(m);
      if (it == by_model.end()) throw FormatError("score table is missing " + m + " for " + key.first);
      row.push_back(it->second);
    }
    if (row[t.column(t.primary_column())] == kNegInf) t.unscorable.push_back(key);
    t.scores.emplace(key, std::move(row));
  }
  return t;
}

}  // namespace ntrf
