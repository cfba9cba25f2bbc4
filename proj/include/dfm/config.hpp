#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfm/ctmc.hpp"
#include "dfm/error.hpp"
#include "dfm/model.hpp"
#include "dfm/optimizer.hpp"
#include "dfm/path.hpp"
#include "dfm/policy.hpp"
#include "dfm/regularize.hpp"
#include "dfm/reward.hpp"
#include "dfm/rl.hpp"

namespace dfm {

// Malformed configuration. line is 0 when the field is absent from the file.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& source, int line, const std::string& field, const std::string& msg);
  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  int line_;
  std::string field_;
};

struct CorpusGenSpec {
  std::string generator = "iid-categorical";
  std::vector<double> probs;  // empty = uniform
  std::vector<int> motif{1, 2, 3};
  double rate = 1.0;
  std::vector<double> probs_a;
  std::vector<double> probs_b;
  double weight = 0.5;
};

struct RunConfig {
  std::string source = "<config>";

  std::uint64_t seed = 0;
  std::string out = "run";
  int threads = 1;

  StateSpace space{8, 4, true};
  SchedulerKind scheduler = SchedulerKind::linear;
  double eps_fraction = 1e-3;
  double dt = 0.05;
  KernelMode kernel = KernelMode::clamp;
  ModelSpec model;  // space and horizon mirror the fields above
  std::uint64_t init_seed = 0;

  std::string corpus;  // path; empty = none
  CorpusGenSpec generator;
  int corpus_n = 1000;

  int pretrain_steps = 2000;
  int pretrain_batch = 64;
  OptimizerState pretrain_opt;
  int checkpoint_every = 0;

  std::string reward = "motif_count(1 2 3)";

  Algorithm algorithm = Algorithm::reinforce;
  std::string checkpoint;  // finetune input; empty = <out>/pretrain_final.ckpt
  int iterations = 200;
  int batch = 64;
  OptimizerState finetune_opt;
  PpoOptions ppo;
  AdvantageSpec advantage;
  RegSpec reg;

  std::string eval_checkpoint;  // empty = <out>/finetune_final.ckpt
  std::string samples;          // empty = <out>/samples.txt
  int eval_samples = 1000;
  int kmer = 3;
  std::uint64_t tv_cap = 4096;  // metrics compute exact TV only below this many states

  std::string check = "all";
  int verify_samples = 100000;

  std::uint64_t hash = 0;

  double horizon() const { return model.horizon; }
  Scheduler make_scheduler() const { return Scheduler(scheduler, model.horizon, eps_fraction); }
  InferenceSpec inference() const;
  RewardFn make_reward() const;
  std::string hash_hex() const;
  std::string pretrain_checkpoint() const;
  std::string finetune_checkpoint() const;
  std::string samples_path() const;
  // One "section.key=value" line per field, defaults included. The hash is
  // taken over this text, so comments and ordering do not matter.
  std::string canonical() const;
  // Recomputes hash after fields were changed in code (e.g. CLI overrides).
  void rehash();
};

RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

}  // namespace dfm
