#pragma once

#include <istream>
#include <string>
#include <vector>

#include "ntrf/potential.hpp"
#include "ntrf/proposal.hpp"
#include "ntrf/trainer.hpp"

namespace ntrf {

// Every tunable of a training run. Loaded from `key = value` lines
// (`#` starts a comment); unknown keys are rejected.
struct RunConfig {
  std::string train_corpus;
  std::string dev_corpus;
  std::string vocab_file;        // optional; built from train_corpus otherwise
  std::string embedding_file;    // optional pretrained embeddings
  std::size_t vocab_size = 10000;
  int max_length = 50;
  std::string precision = "double";

  PotentialConfig potential;
  ProposalConfig proposal;
  TrainConfig train;

  void set(const std::string& key, const std::string& value);
  void load(std::istream& in);
  void load_file(const std::string& path);
  void validate() const;

  static std::vector<std::string> keys();
};

// Reads `<token> <v1> ... <v_de>` lines into the potential embedding table;
// tokens absent from the vocabulary are ignored. Returns rows imported.
std::size_t import_embeddings(const std::string& path, const Vocab& vocab, PotentialParams& theta);

}  // namespace ntrf
