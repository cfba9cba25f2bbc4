// dfm: discrete flow matching command line.
#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>

#include "dfm/commands.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kUsage = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete flow matching: pretraining, RL fine-tuning, sampling and verification"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::string check;
  std::optional<int> n;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override run.seed");
    sub->add_option("--out", out, "override run.out");
  };
  CLI::App* pretrain = app.add_subcommand("pretrain", "train the posterior model on the corpus");
  CLI::App* finetune = app.add_subcommand("finetune", "reward fine-tuning from the pretrained checkpoint");
  CLI::App* sample = app.add_subcommand("sample", "draw terminal samples from a checkpoint");
  CLI::App* eval = app.add_subcommand("eval", "score a sample file");
  CLI::App* verify = app.add_subcommand("verify", "run verification sweeps and write reports");
  CLI::App* corpus = app.add_subcommand("make-corpus", "generate a synthetic corpus");
  for (CLI::App* sub : {pretrain, finetune, sample, eval, verify, corpus}) add_common(sub);
  verify->add_option("--check", check, "value|grad|estimator|sampler|tv-ce|tv-gkl|all");
  sample->add_option("--n", n, "number of samples")->check(CLI::PositiveNumber);
  corpus->add_option("--n", n, "number of sequences")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    dfm::RunConfig cfg = dfm::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out) cfg.out = *out;
    cfg.rehash();

    if (*pretrain) {
      dfm::cmd_pretrain(cfg, std::cerr);
    } else if (*finetune) {
      dfm::cmd_finetune(cfg, std::cerr);
    } else if (*sample) {
      dfm::cmd_sample(cfg, n.value_or(cfg.eval_samples), std::cerr);
    } else if (*eval) {
      dfm::cmd_eval(cfg, cfg.samples_path(), std::cout);
    } else if (*verify) {
      if (!dfm::cmd_verify(cfg, check.empty() ? cfg.check : check, std::cout)) {
        std::cerr << "verification failed\n";
        return kValidation;
      }
    } else if (*corpus) {
      dfm::cmd_make_corpus(cfg, n.value_or(cfg.corpus_n), "", std::cerr);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  }
  return kOk;
}
