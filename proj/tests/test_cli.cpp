#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dfm/checkpoint.hpp"
#include "dfm/commands.hpp"
#include "dfm/corpus_gen.hpp"

using namespace dfm;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dfm_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Tiny tabular setup shared by the command tests.
std::string tiny_config(const fs::path& dir) {
  return "[run]\nseed = 3\nout = " + (dir / "run").string() +
         "\n[space]\nd = 2\nM = 2\nmask = true\n"
         "[path]\ndt = 0.1\n"
         "[model]\nbackend = tabular\ntime_bins = 2\n"
         "[corpus]\npath = " + (dir / "corpus.txt").string() +
         "\ngenerator = iid-categorical\n"
         "[pretrain]\nsteps = 50\nbatch = 8\nlr = 0.05\n"
         "[reward]\nspec = motif_count(1 2)\n"
         "[finetune]\niterations = 3\nbatch = 8\n";
}

}  // namespace

TEST_CASE("config defaults and hashing") {
  const RunConfig a = parse_config("");
  CHECK(a.space.d == 8);
  CHECK(a.space.M == 4);
  CHECK(a.algorithm == Algorithm::reinforce);
  CHECK(a.ppo.clip == 0.2);
  CHECK(a.ppo.epochs == 4);
  CHECK(a.reg.refresh == 10);
  CHECK(a.hash != 0);

  // comments, spacing and order do not change the hash; values do
  const RunConfig b = parse_config("; note\n[finetune]\nlr = 0.001\n\n[run]\nseed=0\n");
  CHECK(b.hash == a.hash);
  const RunConfig c = parse_config("[finetune]\nlr = 0.002\n");
  CHECK(c.hash != a.hash);
  RunConfig d = a;
  d.seed = 9;
  d.rehash();
  CHECK(d.hash != a.hash);
  CHECK(a.hash_hex().size() == 16u);
}

TEST_CASE("config values are parsed into the module types") {
  const RunConfig c = parse_config(
      "[space]\nd = 3\nM = 5\nmask = false\n"
      "[path]\nscheduler = cosine\nhorizon = 2\ndt = 0.25\nkernel = strict\n"
      "[model]\nbackend = neural\nhidden = 16\nconditions = 2\n"
      "[finetune]\nalgorithm = ppo\nclip = 0.1\nepochs = 2\nadvantage = group_normalized\n"
      "[regularizer]\nkind = gkl\nlambda = 1.5\nsource = current-rollouts\n");
  CHECK(c.space.d == 3);
  CHECK(!c.space.has_mask);
  CHECK(c.scheduler == SchedulerKind::cosine);
  CHECK(c.horizon() == 2.0);
  CHECK(c.inference().steps() == 8);
  CHECK(c.kernel == KernelMode::strict);
  CHECK(c.model.backend == Backend::neural);
  CHECK(c.model.neural.hidden == 16);
  CHECK(c.model.conditions() == 2);
  CHECK(c.algorithm == Algorithm::ppo);
  CHECK(c.ppo.clip == 0.1);
  CHECK(c.advantage.kind == AdvantageKind::group_normalized);
  CHECK(c.reg.kind == RegKind::gkl);
  CHECK(c.reg.lambda == 1.5);
  CHECK(c.reg.source == StateSource::current_rollouts);
}

TEST_CASE("config errors carry line and field") {
  auto error_of = [](const std::string& text) -> std::pair<int, std::string> {
    try {
      parse_config(text, "cfg.ini");
    } catch (const ConfigError& e) {
      return {e.line(), e.field()};
    }
    return {-1, ""};
  };
  CHECK(error_of("[run]\nseed = 1\n[finetune]\niterations = many\n") == std::pair<int, std::string>{4, "finetune.iterations"});
  CHECK(error_of("[run]\nseed = -1\n") == std::pair<int, std::string>{2, "run.seed"});
  CHECK(error_of("[finetune]\nlr = 1e-3\nbogus = 2\n") == std::pair<int, std::string>{3, "finetune.bogus"});
  CHECK(error_of("[space]\nmask = maybe\n") == std::pair<int, std::string>{2, "space.mask"});
  CHECK(error_of("[path]\nscheduler = quadratic\n") == std::pair<int, std::string>{2, "path.scheduler"});
  CHECK(error_of("[path]\ndt = 0\n") == std::pair<int, std::string>{2, "path.dt"});
  CHECK(error_of("\n\n[reward]\nspec = banana(1)\n") == std::pair<int, std::string>{4, "reward.spec"});
  CHECK(error_of("[reward]\nspec = motif_count(9)\n") == std::pair<int, std::string>{2, "reward.spec"});
  CHECK(error_of("[regularizer]\nlambda = -1\n") == std::pair<int, std::string>{2, "regularizer.lambda"});
  CHECK(error_of("[run\nseed = 1\n").first == 1);  // syntax

  try {
    parse_config("[finetune]\nepochs = x\n", "cfg.ini");
    FAIL("no error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()) == "cfg.ini:2: finetune.epochs: expected an integer, got 'x'");
  }
  CHECK_THROWS_AS(load_config("/nonexistent/dfm.ini"), Error);
}

TEST_CASE("iid corpus has the configured token frequencies") {
  CorpusGenSpec spec;
  const StateSpace s{8, 4, true};
  const DataCorpus c = make_corpus(spec, s, 1000, 1);
  REQUIRE(c.samples.size() == 1000u);
  std::vector<double> counts(4, 0.0);
  for (const auto& x : c.samples) {
    for (int t : x.tokens) counts[static_cast<std::size_t>(t - 1)] += 1.0;
  }
  for (double n : counts) CHECK(std::abs(n / 8000.0 - 0.25) <= 0.03);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("motif-planted corpus") {
  CorpusGenSpec spec;
  spec.generator = "motif-planted";
  spec.motif = {1, 2, 3};
  spec.rate = 1.0;
  const StateSpace s{8, 4, false};
  const DataCorpus c = make_corpus(spec, s, 500, 2);
  for (const auto& x : c.samples) CHECK(count_motif(x, spec.motif) >= 1);

  spec.rate = 0.0;
  spec.probs = {1, 0, 0, 0};
  for (const auto& x : make_corpus(spec, s, 20, 2).samples) CHECK(x == SequenceState(std::vector<int>(8, 1)));

  spec.motif = {1, 2, 3, 4, 1, 2, 3, 4, 1};
  CHECK_THROWS_AS(make_corpus(spec, s, 5, 2), Error);
  spec.motif = {5};
  CHECK_THROWS_AS(make_corpus(spec, s, 5, 2), Error);
}

TEST_CASE("two-component mixture corpus") {
  CorpusGenSpec spec;
  spec.generator = "two-component-mixture";
  spec.probs_a = {1, 0, 0, 0};
  spec.probs_b = {0, 0, 0, 1};
  spec.weight = 0.3;
  const StateSpace s{4, 4, false};
  const DataCorpus c = make_corpus(spec, s, 2000, 5);
  int ones = 0;
  for (const auto& x : c.samples) {
    const bool a = x == SequenceState({1, 1, 1, 1});
    const bool b = x == SequenceState({4, 4, 4, 4});
    CHECK((a || b));
    ones += a ? 1 : 0;
  }
  // binomial sd = sqrt(2000 * 0.21) ~ 20.5
  CHECK(std::abs(ones - 600) < 4 * 21);
  spec.probs_a = {1, 2};
  CHECK_THROWS_AS(make_corpus(spec, s, 5, 1), Error);
}

TEST_CASE("corpus generation is deterministic per seed") {
  const fs::path dir = scratch("corpus");
  RunConfig cfg = parse_config("[space]\nd = 6\nM = 3\n[corpus]\ngenerator = motif-planted\nmotif = 2 2\nrate = 0.5\n");
  std::ostringstream log;
  cmd_make_corpus(cfg, 200, (dir / "a.txt").string(), log);
  cmd_make_corpus(cfg, 200, (dir / "b.txt").string(), log);
  CHECK(slurp((dir / "a.txt").string()) == slurp((dir / "b.txt").string()));
  CHECK(slurp((dir / "a.txt").string()).find("config_hash=" + cfg.hash_hex()) != std::string::npos);
  cfg.seed = 1;
  cfg.rehash();
  cmd_make_corpus(cfg, 200, (dir / "c.txt").string(), log);
  CHECK(slurp((dir / "a.txt").string()) != slurp((dir / "c.txt").string()));
  cfg.generator.generator = "zipf";
  CHECK_THROWS_WITH_AS(cmd_make_corpus(cfg, 10, (dir / "d.txt").string(), log),
                       doctest::Contains("unknown corpus generator"), Error);
}

TEST_CASE("metrics records are one key=value line") {
  MetricsRecord r;
  r.iteration = 4;
  r.mean_reward = 1.5;
  r.reward_std = 0.25;
  r.reg_value = 0.0;
  r.wall_time = 2.0;
  CHECK(r.format("abc") ==
        "iteration=4 mean_reward=1.5 reward_std=0.25 reg_value=0 wall_time=2.000 config_hash=abc");
  r.tv_ref = 0.125;
  r.kmer_corr = 0.5;
  CHECK(r.format("abc").find(" tv_ref=0.125 kmer_corr=0.5 ") != std::string::npos);
}

TEST_CASE("pipeline commands") {
  const fs::path dir = scratch("pipeline");
  std::ostringstream log;
  RunConfig cfg = parse_config(tiny_config(dir));
  cmd_make_corpus(cfg, 100, "", log);
  CHECK_THROWS_WITH_AS(cmd_finetune(cfg, log), doctest::Contains("missing checkpoint"), Error);
  const PretrainResult pre = cmd_pretrain(cfg, log);
  CHECK(pre.losses.size() == 50u);
  REQUIRE(fs::exists(cfg.pretrain_checkpoint()));

  SUBCASE("finetune with zero iterations keeps the model") {
    RunConfig k0 = cfg;
    k0.iterations = 0;
    k0.rehash();
    const FinetuneResult res = cmd_finetune(k0, log);
    CHECK(res.records.empty());
    const Checkpoint in = checkpoint_load(k0.pretrain_checkpoint());
    const Checkpoint out = checkpoint_load(res.checkpoint);
    CHECK(std::vector<double>(in.model.params().begin(), in.model.params().end()) ==
          std::vector<double>(out.model.params().begin(), out.model.params().end()));
    CHECK(out.model.spec() == in.model.spec());
  }

  SUBCASE("finetune writes one metrics record per iteration") {
    const FinetuneResult res = cmd_finetune(cfg, log);
    REQUIRE(res.records.size() == 3u);
    CHECK(res.records[0].tv_ref.has_value());
    CHECK(*res.records[0].tv_ref == doctest::Approx(0.0).epsilon(1e-12));
    const std::string metrics = slurp(cfg.out + "/finetune_metrics.txt");
    CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 3);
    CHECK(metrics.find("iteration=2 ") != std::string::npos);
    CHECK(metrics.find("config_hash=" + cfg.hash_hex()) != std::string::npos);
  }

  SUBCASE("sampling is deterministic and eval scores the file") {
    const std::string f = cmd_sample(cfg, 300, log);
    const std::string first = slurp(f);
    cmd_sample(cfg, 300, log);
    CHECK(slurp(f) == first);
    CHECK(first.find("config_hash=" + cfg.hash_hex()) != std::string::npos);

    const DataCorpus s = read_corpus(f, cfg.space);
    const RewardFn r = cfg.make_reward();
    double mean = 0.0;
    for (const auto& x : s.samples) {
      CHECK(x.size() == 2);
      for (int t : x.tokens) CHECK((t == 1 || t == 2));
      mean += r(x);
    }
    mean /= static_cast<double>(s.samples.size());
    const EvalResult ev = cmd_eval(cfg, f, log);
    CHECK(ev.samples == 300u);
    CHECK(ev.mean_reward == doctest::Approx(mean));
    CHECK(ev.tv_corpus.has_value());
    CHECK(fs::exists(cfg.out + "/eval.txt"));
  }
}

TEST_CASE("verify writes one report per sweep") {
  const fs::path dir = scratch("verify");
  RunConfig cfg = parse_config("[run]\nout = " + dir.string() + "\n[verify]\nsamples = 20000\n");
  std::ostringstream log;
  CHECK(cmd_verify(cfg, "sampler", log));
  const std::string rep = slurp((dir / "verify_sampler.txt").string());
  CHECK(rep.find("config_hash=" + cfg.hash_hex()) != std::string::npos);
  CHECK(rep.find("# x measured oracle error") != std::string::npos);
  CHECK_THROWS_WITH_AS(cmd_verify(cfg, "nonsense", log), doctest::Contains("unknown check"), Error);
}

TEST_CASE("named checks are deterministic") {
  const CheckOutcome a = run_check("estimator", 4, 2000);
  const CheckOutcome b = run_check("estimator", 4, 2000);
  REQUIRE(a.reports.size() == 1u);
  CHECK(format_report(a.reports[0]) == format_report(b.reports[0]));
  CHECK(std::stod(a.reports[0].extra[2].second) < 1e-10);  // |J_RL - J|
}
