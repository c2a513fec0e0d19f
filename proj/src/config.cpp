#include "ntrf/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "ntrf/errors.hpp"

namespace ntrf {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_same_v<T, double>) {
      out = std::stod(v, &used);
    } else if constexpr (std::is_same_v<T, int>) {
      out = std::stoi(v, &used);
    } else {
      const long long x = std::stoll(v, &used);
      if (x < 0) throw std::invalid_argument(v);
      out = static_cast<T>(x);
    }
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key, "invalid value '" + v + "' for key '" + key + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError(key, "invalid boolean '" + v + "' for key '" + key + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto str = [&](const char* k, std::string RunConfig::*field) {
      t[k] = [field](RunConfig& c, const std::string&, const std::string& v) { c.*field = v; };
    };
    str("train_corpus", &RunConfig::train_corpus);
    str("dev_corpus", &RunConfig::dev_corpus);
    str("vocab_file", &RunConfig::vocab_file);
    str("embedding_file", &RunConfig::embedding_file);
    t["precision"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      if (v != "double") throw ConfigError(k, "only precision = double is supported");
      c.precision = v;
    };
    t["vocab_size"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.vocab_size = parse_number<std::size_t>(k, v);
    };
    t["max_length"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.max_length = parse_number<int>(k, v);
    };

    auto pint = [&](const char* k, int PotentialConfig::*field) {
      t[k] = [field](RunConfig& c, const std::string& key, const std::string& v) {
        c.potential.*field = parse_number<int>(key, v);
      };
    };
    pint("embed_dim", &PotentialConfig::embed_dim);
    pint("proj_dim", &PotentialConfig::proj_dim);
    pint("max_width", &PotentialConfig::max_width);
    pint("filters_per_width", &PotentialConfig::filters_per_width);
    pint("stack_depth", &PotentialConfig::stack_depth);
    pint("stack_dim", &PotentialConfig::stack_dim);
    pint("stack_width", &PotentialConfig::stack_width);
    t["pool"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.potential.pool = parse_bool(k, v); };

    t["proposal_embed_dim"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.proposal.embed_dim = parse_number<int>(k, v);
    };
    t["proposal_hidden"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.proposal.hidden = parse_number<int>(k, v);
    };

    t["batch_data"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.batch_data = parse_number<std::size_t>(k, v);
    };
    t["batch_samples"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.batch_samples = parse_number<std::size_t>(k, v);
    };
    t["max_iterations"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.max_iterations = static_cast<std::int64_t>(parse_number<std::size_t>(k, v));
    };
    auto sched = [&](const char* k, Schedule TrainConfig::*field) {
      t[k] = [field](RunConfig& c, const std::string& key, const std::string& v) {
        try {
          c.train.*field = Schedule::parse(v);
        } catch (const ConfigError& e) {
          throw ConfigError(key, std::string(e.what()) + " for key '" + key + "'");
        }
      };
    };
    sched("lr_theta", &TrainConfig::lr_theta);
    sched("lr_zeta", &TrainConfig::lr_zeta);
    sched("lr_mu", &TrainConfig::lr_mu);
    auto tdouble = [&](const char* k, double TrainConfig::*field) {
      t[k] = [field](RunConfig& c, const std::string& key, const std::string& v) {
        c.train.*field = parse_number<double>(key, v);
      };
    };
    tdouble("mu_clip", &TrainConfig::mu_clip);
    tdouble("init_bound", &TrainConfig::init_bound);
    tdouble("length_floor", &TrainConfig::length_floor);
    tdouble("min_delta", &TrainConfig::min_delta);
    auto tint = [&](const char* k, int TrainConfig::*field) {
      t[k] = [field](RunConfig& c, const std::string& key, const std::string& v) {
        c.train.*field = parse_number<int>(key, v);
      };
    };
    tint("chains", &TrainConfig::chains);
    tint("cache_depth", &TrainConfig::cache_depth);
    tint("eval_every", &TrainConfig::eval_every);
    tint("smooth_window", &TrainConfig::smooth_window);
    tint("patience", &TrainConfig::patience);
    tint("max_nan_streak", &TrainConfig::max_nan_streak);
    tint("workers", &TrainConfig::workers);
    t["checkpoint_every"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.checkpoint_every = static_cast<std::int64_t>(parse_number<std::size_t>(k, v));
    };
    t["early_stop"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.early_stop = parse_bool(k, v);
    };
    t["seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.seed = parse_number<std::size_t>(k, v);
    };
    t["out_dir"] = [](RunConfig& c, const std::string&, const std::string& v) { c.train.out_dir = v; };
    t["log_csv"] = [](RunConfig& c, const std::string&, const std::string& v) { c.train.log_csv = v; };
    t["jump_range"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.jump.range = parse_number<int>(k, v);
    };
    t["block_size"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.jump.block = parse_number<int>(k, v);
    };
    t["trials"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.jump.trials = parse_number<int>(k, v);
    };
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError(key, "unknown config key '" + key + "'");
  it->second(*this, key, value);
}

void RunConfig::load(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(line, "config line " + std::to_string(lineno) + " is not 'key = value'");
    }
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path);
  load(in);
}

void RunConfig::validate() const {
  if (max_length < 1) throw ConfigError("max_length", "max_length must be at least 1");
  if (vocab_size < 2) throw ConfigError("vocab_size", "vocab_size must be at least 2");
  potential.validate();
  if (proposal.embed_dim < 1 || proposal.hidden < 1) {
    throw ConfigError("proposal_hidden", "proposal sizes must be positive");
  }
  train.validate();
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, v] : setters()) out.push_back(k);
  return out;
}

std::size_t import_embeddings(const std::string& path, const Vocab& vocab, PotentialParams& theta) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open embedding file " + path);
  Matrix& table = theta.tensors()[PotentialParams::kEmbed].value;
  std::size_t imported = 0;
  std::string line;
  while (std::getline(in, line)) {
    auto f = split_whitespace(line);
    if (f.empty()) continue;
    if (static_cast<Eigen::Index>(f.size()) != table.rows() + 1) {
      // word2vec text files open with a "<count> <dim>" header line.
      if (imported == 0 && f.size() == 2) continue;
      throw IngestionError("embedding for '" + f[0] + "' has the wrong dimension");
    }
    if (!vocab.contains(f[0])) continue;
    const TokenId id = vocab.id(f[0]);
    for (Eigen::Index d = 0; d < table.rows(); ++d) {
      table(d, id) = parse_number<double>("embedding_file", f[static_cast<std::size_t>(d + 1)]);
    }
    ++imported;
  }
  return imported;
}

}  // namespace ntrf
