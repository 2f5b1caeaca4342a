#include "saslm/runconfig.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace saslm {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw std::runtime_error("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw std::runtime_error("config key '" + key + "': expected number, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    unsigned long long out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw std::runtime_error("config key '" + key + "': expected unsigned integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::runtime_error("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  if (corpus_train.empty()) throw std::runtime_error("config: corpus.train is required");
  if (corpus_vocab.empty()) throw std::runtime_error("config: corpus.vocab is required");
  if (output_dir.empty()) throw std::runtime_error("config: run.output_dir is required");
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config_text(ss.str(), path);
}

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));

    if (key == "corpus.train") cfg.corpus_train = value;
    else if (key == "corpus.heldout") cfg.corpus_heldout = value;
    else if (key == "corpus.vocab") cfg.corpus_vocab = value;
    else if (key == "corpus.oracle") cfg.corpus_oracle = value;
    else if (key == "corpus.probe_a") cfg.corpus_probe_a = value;
    else if (key == "corpus.probe_b") cfg.corpus_probe_b = value;
    else if (key == "model.layers") cfg.train.encoder.layers = to_int(key, value);
    else if (key == "model.hidden") cfg.train.encoder.hidden = to_int(key, value);
    else if (key == "model.heads") cfg.train.encoder.heads = to_int(key, value);
    else if (key == "model.ffn") cfg.train.encoder.ffn = to_int(key, value);
    else if (key == "model.seq_len") cfg.train.encoder.seq_len = to_int(key, value);
    else if (key == "model.dropout") cfg.train.encoder.dropout = static_cast<float>(to_double(key, value));
    else if (key == "model.tied") cfg.train.encoder.tied_embeddings = to_bool(key, value);
    else if (key == "train.strategy") cfg.train.strategy = parse_strategy(value);
    else if (key == "train.epochs") cfg.train.epochs = to_int(key, value);
    else if (key == "train.batch_size") cfg.train.batch_size = to_int(key, value);
    else if (key == "train.peak_lr") cfg.train.peak_lr = to_double(key, value);
    else if (key == "train.warmup_fraction") cfg.train.warmup_fraction = to_double(key, value);
    else if (key == "train.weight_decay") cfg.train.adam.weight_decay = to_double(key, value);
    else if (key == "train.adam_beta1") cfg.train.adam.beta1 = to_double(key, value);
    else if (key == "train.adam_beta2") cfg.train.adam.beta2 = to_double(key, value);
    else if (key == "train.adam_eps") cfg.train.adam.eps = to_double(key, value);
    else if (key == "train.seed") cfg.train.seed = to_u64(key, value);
    else if (key == "train.checkpoint_every") cfg.train.checkpoint_every = to_int(key, value);
    else if (key == "train.log_every") cfg.train.log_every = to_int(key, value);
    else if (key == "lambda.start") cfg.train.lambda_start = to_double(key, value);
    else if (key == "lambda.end") cfg.train.lambda_end = to_double(key, value);
    else if (key == "lambda.mode") {
      if (value == "auto") cfg.train.lambda_mode = TrainConfig::LambdaMode::Auto;
      else if (value == "constant") cfg.train.lambda_mode = TrainConfig::LambdaMode::Constant;
      else if (value == "epoch_linear") cfg.train.lambda_mode = TrainConfig::LambdaMode::EpochLinear;
      else throw std::runtime_error("config key 'lambda.mode': expected auto|constant|epoch_linear");
    } else if (key == "augment.cold_start") {
      if (value == "unigram") cfg.train.cold_start = ColdStartMode::Unigram;
      else if (value == "uniform") cfg.train.cold_start = ColdStartMode::Uniform;
      else throw std::runtime_error("config key 'augment.cold_start': expected unigram|uniform");
    } else if (key == "run.output_dir") {
      cfg.output_dir = value;
    } else {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
    }
  }
  if (const char* env = std::getenv("SASLM_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
  return cfg;
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["corpus.train"] = cfg.corpus_train;
  if (!cfg.corpus_heldout.empty()) kv["corpus.heldout"] = cfg.corpus_heldout;
  kv["corpus.vocab"] = cfg.corpus_vocab;
  if (!cfg.corpus_oracle.empty()) kv["corpus.oracle"] = cfg.corpus_oracle;
  if (!cfg.corpus_probe_a.empty()) kv["corpus.probe_a"] = cfg.corpus_probe_a;
  if (!cfg.corpus_probe_b.empty()) kv["corpus.probe_b"] = cfg.corpus_probe_b;
  kv["model.layers"] = std::to_string(cfg.train.encoder.layers);
  kv["model.hidden"] = std::to_string(cfg.train.encoder.hidden);
  kv["model.heads"] = std::to_string(cfg.train.encoder.heads);
  kv["model.ffn"] = std::to_string(cfg.train.encoder.ffn);
  kv["model.seq_len"] = std::to_string(cfg.train.encoder.seq_len);
  kv["model.dropout"] = fmt_double(cfg.train.encoder.dropout);
  kv["model.tied"] = cfg.train.encoder.tied_embeddings ? "true" : "false";
  kv["train.strategy"] = strategy_name(cfg.train.strategy);
  kv["train.epochs"] = std::to_string(cfg.train.epochs);
  kv["train.batch_size"] = std::to_string(cfg.train.batch_size);
  kv["train.peak_lr"] = fmt_double(cfg.train.peak_lr);
  kv["train.warmup_fraction"] = fmt_double(cfg.train.warmup_fraction);
  kv["train.weight_decay"] = fmt_double(cfg.train.adam.weight_decay);
  kv["train.adam_beta1"] = fmt_double(cfg.train.adam.beta1);
  kv["train.adam_beta2"] = fmt_double(cfg.train.adam.beta2);
  kv["train.adam_eps"] = fmt_double(cfg.train.adam.eps);
  kv["train.seed"] = std::to_string(cfg.train.seed);
  kv["train.checkpoint_every"] = std::to_string(cfg.train.checkpoint_every);
  kv["train.log_every"] = std::to_string(cfg.train.log_every);
  kv["lambda.start"] = fmt_double(cfg.train.lambda_start);
  kv["lambda.end"] = fmt_double(cfg.train.lambda_end);
  kv["lambda.mode"] = cfg.train.lambda_mode == TrainConfig::LambdaMode::Auto ? "auto"
                      : cfg.train.lambda_mode == TrainConfig::LambdaMode::Constant ? "constant"
                                                                                   : "epoch_linear";
  kv["augment.cold_start"] = cfg.train.cold_start == ColdStartMode::Unigram ? "unigram" : "uniform";
  kv["run.output_dir"] = cfg.output_dir;
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

RunDirLock::RunDirLock(const std::string& dir) : path_(dir + "/.lock") {
  std::filesystem::create_directories(dir);
  if (std::filesystem::exists(path_))
    throw std::runtime_error("run directory is locked by another writer: " + dir);
  std::ofstream lock(path_);
  if (!lock) throw std::runtime_error("cannot create lock file: " + path_);
  lock << "locked\n";
}

RunDirLock::~RunDirLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

}  // namespace saslm
