#pragma once

#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dfm/checks.hpp"
#include "dfm/config.hpp"
#include "dfm/pretrain.hpp"

namespace dfm {

struct MetricsRecord {
  int iteration = 0;
  double mean_reward = 0.0;
  double reward_std = 0.0;
  double reg_value = 0.0;
  std::optional<double> tv_ref;     // only when the space is small enough
  std::optional<double> kmer_corr;  // only when a corpus is configured
  long clamped_steps = 0;           // Euler steps renormalized in clamp mode
  double wall_time = 0.0;           // seconds since the run started

  // One self-describing line, no trailing newline.
  std::string format(const std::string& config_hash) const;
};

// Append-only metrics stream; the file is truncated when the run starts.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, std::string config_hash);
  void append(const MetricsRecord& r);
  void append_line(const std::string& body);

 private:
  std::ofstream out_;
  std::string hash_;
};

struct FinetuneResult {
  std::vector<MetricsRecord> records;
  std::string checkpoint;
};

struct EvalResult {
  std::size_t samples = 0;
  double mean_reward = 0.0;
  double reward_std = 0.0;
  std::optional<double> kmer_corr;
  std::optional<double> tv_corpus;  // empirical samples vs empirical corpus
};

// Each command writes its artifacts under cfg.out and throws dfm::Error on
// invalid input. Progress goes to log.
PretrainResult cmd_pretrain(const RunConfig& cfg, std::ostream& log);
FinetuneResult cmd_finetune(const RunConfig& cfg, std::ostream& log);
std::string cmd_sample(const RunConfig& cfg, int n, std::ostream& log);
EvalResult cmd_eval(const RunConfig& cfg, const std::string& samples, std::ostream& log);
// Returns false if any report fails. check = "all" runs every protocol.
bool cmd_verify(const RunConfig& cfg, const std::string& check, std::ostream& log);
std::string cmd_make_corpus(const RunConfig& cfg, int n, const std::string& path, std::ostream& log);

// Model construction from the config (fresh parameters).
PosteriorModel make_model(const RunConfig& cfg);
// Checkpoint to sample or evaluate: eval.checkpoint, else the finetune
// output if present, else the pretrain output.
std::string resolve_eval_checkpoint(const RunConfig& cfg);

}  // namespace dfm
