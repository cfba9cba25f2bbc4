#include "dfm/commands.hpp"

#include <fmt/format.h>

#include <chrono>
#include <filesystem>

#include "dfm/checkpoint.hpp"
#include "dfm/corpus_gen.hpp"
#include "dfm/distribution.hpp"
#include "dfm/error.hpp"
#include "dfm/regularize.hpp"
#include "dfm/rl.hpp"

namespace dfm {

namespace fs = std::filesystem;

std::string MetricsRecord::format(const std::string& config_hash) const {
  std::string s = fmt::format("iteration={} mean_reward={:.6g} reward_std={:.6g} reg_value={:.6g}", iteration,
                              mean_reward, reward_std, reg_value);
  if (tv_ref) s += fmt::format(" tv_ref={:.6g}", *tv_ref);
  if (kmer_corr) s += fmt::format(" kmer_corr={:.6g}", *kmer_corr);
  if (clamped_steps > 0) s += fmt::format(" clamped_steps={}", clamped_steps);
  s += fmt::format(" wall_time={:.3f} config_hash={}", wall_time, config_hash);
  return s;
}

MetricsWriter::MetricsWriter(const std::string& path, std::string config_hash)
    : out_(path, std::ios::trunc), hash_(std::move(config_hash)) {
  if (!out_) throw Error(fmt::format("cannot write metrics '{}'", path));
}

void MetricsWriter::append(const MetricsRecord& r) {
  out_ << r.format(hash_) << '\n';
  out_.flush();
}

void MetricsWriter::append_line(const std::string& body) {
  out_ << body << " config_hash=" << hash_ << '\n';
  out_.flush();
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// The space corpora and samples live in: same d and M, mask as configured.
const StateSpace& data_space(const RunConfig& cfg) { return cfg.space; }

std::optional<DataCorpus> load_corpus(const RunConfig& cfg) {
  if (cfg.corpus.empty()) return std::nullopt;
  return read_corpus(cfg.corpus, data_space(cfg));
}

std::optional<double> safe_kmer(std::span<const SequenceState> a, std::span<const SequenceState> b, int k, int M) {
  try {
    return kmer_correlation(a, b, k, M);
  } catch (const Error&) {
    return std::nullopt;  // constant profile, correlation undefined
  }
}

void write_resolved(const RunConfig& cfg) {
  fs::create_directories(cfg.out);
  std::ofstream out(fs::path(cfg.out) / "config.resolved");
  out << "# config_hash=" << cfg.hash_hex() << '\n' << cfg.canonical();
}

}  // namespace

PosteriorModel make_model(const RunConfig& cfg) {
  if (cfg.model.backend == Backend::tabular) {
    return PosteriorModel::tabular(cfg.model.space, cfg.model.horizon, cfg.model.tabular);
  }
  return PosteriorModel::neural(cfg.model.space, cfg.model.horizon, cfg.model.neural, cfg.init_seed);
}

std::string resolve_eval_checkpoint(const RunConfig& cfg) {
  if (!cfg.eval_checkpoint.empty()) return cfg.eval_checkpoint;
  if (fs::exists(cfg.finetune_checkpoint())) return cfg.finetune_checkpoint();
  return cfg.pretrain_checkpoint();
}

PretrainResult cmd_pretrain(const RunConfig& cfg, std::ostream& log) {
  const auto corpus = load_corpus(cfg);
  if (!corpus) throw Error("pretrain needs corpus.path");
  write_resolved(cfg);
  PosteriorModel model = make_model(cfg);
  PretrainOptions opts;
  opts.steps = cfg.pretrain_steps;
  opts.batch = cfg.pretrain_batch;
  opts.optimizer = cfg.pretrain_opt;
  opts.seed = cfg.seed;
  opts.checkpoint_every = cfg.checkpoint_every;
  opts.checkpoint_dir = cfg.out;
  opts.tag = cfg.hash_hex();
  MetricsWriter metrics((fs::path(cfg.out) / "pretrain_metrics.txt").string(), cfg.hash_hex());
  const auto start = Clock::now();
  const int every = std::max(1, cfg.pretrain_steps / 10);
  PretrainResult res = pretrain_loop(model, cfg.make_scheduler(), *corpus, opts, [&](int step, double loss) {
    metrics.append_line(fmt::format("step={} loss={:.6g} wall_time={:.3f}", step, loss, seconds_since(start)));
    if ((step + 1) % every == 0) log << fmt::format("pretrain step {} loss {:.4f}\n", step + 1, loss);
  });
  log << fmt::format("wrote {}\n", cfg.pretrain_checkpoint());
  return res;
}

FinetuneResult cmd_finetune(const RunConfig& cfg, std::ostream& log) {
  const std::string input = cfg.checkpoint.empty() ? cfg.pretrain_checkpoint() : cfg.checkpoint;
  if (!fs::exists(input)) throw Error(fmt::format("missing checkpoint '{}'", input));
  Checkpoint ck = checkpoint_load(input, cfg.model);
  write_resolved(cfg);
  PosteriorModel model = ck.model;
  ReferenceModel ref(ck.model);
  const InferenceSpec spec = cfg.inference();
  const RewardFn reward = cfg.make_reward();
  const auto corpus = load_corpus(cfg);
  const int conditions = cfg.model.conditions();
  OptimizerState opt = cfg.finetune_opt;
  std::optional<DistributionTable> ref_terminal;
  if (cfg.space.size() <= cfg.tv_cap) ref_terminal = terminal_distribution(ref.model(), spec);

  MetricsWriter metrics((fs::path(cfg.out) / "finetune_metrics.txt").string(), cfg.hash_hex());
  FinetuneResult res;
  const auto start = Clock::now();
  for (int it = 0; it < cfg.iterations; ++it) {
    RolloutOptions ro;
    ro.count = cfg.batch;
    ro.seed = cfg.seed;
    ro.iteration = static_cast<std::uint64_t>(it);
    ro.conditions = conditions;
    ro.threads = cfg.threads;
    RolloutBatch batch = rollout(model, spec, reward, ro);
    compute_advantages(batch, cfg.advantage);

    MetricsRecord rec;
    rec.iteration = it;
    rec.mean_reward = batch.mean_reward();
    rec.reward_std = batch.reward_std();
    for (const auto& t : batch.trajectories) rec.clamped_steps += t.clamped_steps;
    std::vector<RegState> current;
    std::span<const RegState> states;
    if (cfg.reg.kind == RegKind::ce || cfg.reg.kind == RegKind::gkl) {
      if (cfg.reg.source == StateSource::reference_rollouts) {
        states = ref.states(spec, cfg.reg, cfg.seed, static_cast<std::uint64_t>(it), conditions);
      } else {
        current = states_from_batch(batch, spec);
        states = current;
      }
    }
    if (cfg.reg.kind == RegKind::path_kl) rec.reg_value = pathwise_kl(model, ref.model(), spec, batch);
    if (!cfg.reg.active() && !states.empty()) {
      rec.reg_value = regularizer_value(cfg.reg.kind, model, ref.model(), spec.sched, states);
    }
    if (ref_terminal) rec.tv_ref = tv_distance(terminal_distribution(model, spec), *ref_terminal);
    if (corpus) {
      std::vector<SequenceState> terminals;
      terminals.reserve(batch.trajectories.size());
      for (const auto& t : batch.trajectories) terminals.push_back(t.terminal());
      rec.kmer_corr = safe_kmer(terminals, corpus->samples, cfg.kmer, cfg.space.M);
    }

    const StepReport step = total_objective_step(model, ref.model(), spec, batch, cfg.reg, states, cfg.algorithm,
                                                 cfg.ppo, opt);
    if (cfg.reg.active()) rec.reg_value = step.reg_value;
    rec.wall_time = seconds_since(start);
    metrics.append(rec);
    res.records.push_back(rec);
    if ((it + 1) % std::max(1, cfg.iterations / 10) == 0) {
      log << fmt::format("finetune iteration {} mean reward {:.4f} reg {:.4g}\n", it + 1, rec.mean_reward,
                         rec.reg_value);
    }
  }
  res.checkpoint = cfg.finetune_checkpoint();
  checkpoint_save(res.checkpoint, model, cfg.iterations > 0 ? &opt : nullptr, cfg.hash_hex());
  log << fmt::format("wrote {}\n", res.checkpoint);
  return res;
}

std::string cmd_sample(const RunConfig& cfg, int n, std::ostream& log) {
  if (n < 1) throw Error("sample count must be >= 1");
  const std::string path = resolve_eval_checkpoint(cfg);
  if (!fs::exists(path)) throw Error(fmt::format("missing checkpoint '{}'", path));
  const Checkpoint ck = checkpoint_load(path, cfg.model);
  const InferenceSpec spec = cfg.inference();
  const int conditions = cfg.model.conditions();
  std::vector<SequenceState> out;
  std::vector<Condition> labels;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const std::uint64_t s = seed_from({cfg.seed, 0x73616d70ULL, static_cast<std::uint64_t>(k)});
    Condition c;
    if (conditions > 0) c = static_cast<int>(s % static_cast<std::uint64_t>(conditions));
    out.push_back(sample_trajectory(ck.model, spec, s, c).terminal());
    if (c) labels.push_back(c);
  }
  const std::string file = cfg.samples_path();
  if (const auto dir = fs::path(file).parent_path(); !dir.empty()) fs::create_directories(dir);
  write_corpus(file, DataCorpus::from_samples(data_space(cfg), std::move(out), std::move(labels)),
               fmt::format("config_hash={} checkpoint={}", cfg.hash_hex(), path));
  log << fmt::format("wrote {} samples to {}\n", n, file);
  return file;
}

EvalResult cmd_eval(const RunConfig& cfg, const std::string& samples, std::ostream& log) {
  const DataCorpus s = read_corpus(samples, data_space(cfg));
  if (s.samples.empty()) throw Error(fmt::format("no samples in '{}'", samples));
  const RewardFn reward = cfg.make_reward();
  EvalResult res;
  res.samples = s.samples.size();
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t k = 0; k < s.samples.size(); ++k) {
    const double r = reward(s.samples[k], s.conditions.empty() ? Condition{} : s.conditions[k]);
    sum += r;
    sumsq += r * r;
  }
  const auto n = static_cast<double>(s.samples.size());
  res.mean_reward = sum / n;
  res.reward_std = std::sqrt(std::max(0.0, sumsq / n - res.mean_reward * res.mean_reward));
  if (const auto corpus = load_corpus(cfg)) {
    res.kmer_corr = safe_kmer(s.samples, corpus->samples, cfg.kmer, cfg.space.M);
    const StateSpace plain{cfg.space.d, cfg.space.M, false, cfg.space.enumeration_cap};
    if (plain.enumerable()) {
      res.tv_corpus = tv_distance(DistributionTable::empirical(plain, s.samples),
                                  DistributionTable::empirical(plain, corpus->samples));
    }
  }
  fs::create_directories(cfg.out);
  std::ofstream out(fs::path(cfg.out) / "eval.txt");
  std::string text = fmt::format("config_hash={}\nsamples_file={}\nsamples={}\nmean_reward={:.6g}\nreward_std={:.6g}\n",
                                 cfg.hash_hex(), samples, res.samples, res.mean_reward, res.reward_std);
  if (res.kmer_corr) text += fmt::format("kmer{}_corr={:.6g}\n", cfg.kmer, *res.kmer_corr);
  if (res.tv_corpus) text += fmt::format("tv_corpus={:.6g}\n", *res.tv_corpus);
  out << text;
  log << text;
  return res;
}

bool cmd_verify(const RunConfig& cfg, const std::string& check, std::ostream& log) {
  std::vector<std::string> names;
  if (check == "all") {
    names = check_names();
  } else {
    names.push_back(check);
  }
  fs::create_directories(cfg.out);
  bool all = true;
  for (const auto& name : names) {
    const auto start = Clock::now();
    CheckOutcome res = run_check(name, cfg.seed, cfg.verify_samples);
    for (SweepReport& rep : res.reports) {
      rep.set("config_hash", cfg.hash_hex());
      const std::string file = (fs::path(cfg.out) / ("verify_" + rep.name + ".txt")).string();
      write_report(file, rep);
      log << fmt::format("{} {} slope={:.4f} -> {}\n", rep.pass ? "PASS" : "FAIL", rep.name, rep.slope, file);
    }
    log << fmt::format("{} {} ({:.1f}s)\n", res.pass ? "PASS" : "FAIL", name, seconds_since(start));
    all = all && res.pass;
  }
  return all;
}

std::string cmd_make_corpus(const RunConfig& cfg, int n, const std::string& path, std::ostream& log) {
  const std::string file = path.empty() ? (cfg.corpus.empty() ? cfg.out + "/corpus.txt" : cfg.corpus) : path;
  const DataCorpus corpus = make_corpus(cfg.generator, data_space(cfg), n, cfg.seed);
  if (const auto dir = fs::path(file).parent_path(); !dir.empty()) fs::create_directories(dir);
  write_corpus(file, corpus, fmt::format("config_hash={} generator={}", cfg.hash_hex(), cfg.generator.generator));
  log << fmt::format("wrote {} sequences to {}\n", n, file);
  return file;
}

}  // namespace dfm
