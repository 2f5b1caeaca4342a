#pragma once

#include <string>

#include "saslm/trainer.hpp"

namespace saslm {

// Resolved contents of a run configuration file. The file format is flat
// `section.key = value` text; unknown keys are rejected. The environment
// variable SASLM_OUTPUT_DIR, when set, overrides run.output_dir.
struct RunConfig {
  std::string corpus_train;
  std::string corpus_heldout;
  std::string corpus_vocab;
  std::string corpus_oracle;
  std::string corpus_probe_a;
  std::string corpus_probe_b;
  std::string output_dir;
  TrainConfig train;  // encoder.vocab_size is filled when the vocab is loaded

  void validate() const;
};

RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text, const std::string& origin);

// Canonical key=value dump; written to the run directory as the frozen copy.
std::string serialize_run_config(const RunConfig& cfg);

// Exclusive ownership of a run directory via a lock file, released on
// destruction.
class RunDirLock {
public:
  explicit RunDirLock(const std::string& dir);
  ~RunDirLock();
  RunDirLock(const RunDirLock&) = delete;
  RunDirLock& operator=(const RunDirLock&) = delete;

private:
  std::string path_;
};

}  // namespace saslm
