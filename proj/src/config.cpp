#include "dfm/config.hpp"

#include <fmt/format.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dfm/hash.hpp"

namespace dfm {

ConfigError::ConfigError(const std::string& source, int line, const std::string& field,
                         const std::string& msg)
    : Error(line > 0 ? fmt::format("{}:{}: {}: {}", source, line, field, msg)
                     : fmt::format("{}: {}: {}", source, field, msg)),
      line_(line),
      field_(field) {}

namespace {

namespace pt = boost::property_tree;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// "section.key" -> line number. read_ini keeps no positions, so scan once.
std::map<std::string, int> index_lines(const std::string& text) {
  std::map<std::string, int> lines;
  std::istringstream in(text);
  std::string line, section;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == ';' || t[0] == '#') continue;
    if (t[0] == '[') {
      section = trim(t.substr(1, t.find(']') - 1));
      lines.emplace(section, n);
      continue;
    }
    const auto eq = t.find('=');
    if (eq != std::string::npos) lines.emplace(section + "." + trim(t.substr(0, eq)), n);
  }
  return lines;
}

class Reader {
 public:
  Reader(const pt::ptree& tree, std::map<std::string, int> lines, std::string source)
      : tree_(tree), lines_(std::move(lines)), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::string& field, const std::string& msg) const {
    const auto it = lines_.find(field);
    throw ConfigError(source_, it == lines_.end() ? 0 : it->second, field, msg);
  }

  std::optional<std::string> raw(const std::string& field) {
    used_.insert(field);
    const auto v = tree_.get_optional<std::string>(pt::ptree::path_type(field, '.'));
    if (!v) return std::nullopt;
    return trim(*v);
  }

  void str(const std::string& field, std::string& out) {
    if (auto v = raw(field)) out = *v;
  }

  template <class T>
  void num(const std::string& field, T& out, std::optional<T> lo = {}, std::optional<T> hi = {}) {
    const auto v = raw(field);
    if (!v) return;
    T parsed{};
    try {
      std::size_t used = 0;
      if constexpr (std::is_floating_point_v<T>) {
        parsed = static_cast<T>(std::stod(*v, &used));
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!v->empty() && (*v)[0] == '-') throw std::invalid_argument("negative");
        parsed = static_cast<T>(std::stoull(*v, &used));
      } else {
        parsed = static_cast<T>(std::stoll(*v, &used));
      }
      if (used != v->size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail(field, fmt::format("expected {}, got '{}'", std::is_floating_point_v<T> ? "a number" : "an integer", *v));
    }
    if ((lo && parsed < *lo) || (hi && parsed > *hi)) {
      fail(field, fmt::format("value {} out of range", *v));
    }
    out = parsed;
  }

  void flag(const std::string& field, bool& out) {
    const auto v = raw(field);
    if (!v) return;
    if (*v == "true" || *v == "1" || *v == "yes") {
      out = true;
    } else if (*v == "false" || *v == "0" || *v == "no") {
      out = false;
    } else {
      fail(field, fmt::format("expected true or false, got '{}'", *v));
    }
  }

  template <class T>
  void list(const std::string& field, std::vector<T>& out) {
    const auto v = raw(field);
    if (!v) return;
    std::istringstream in(*v);
    std::vector<T> parsed;
    std::string word;
    while (in >> word) {
      try {
        std::size_t used = 0;
        if constexpr (std::is_floating_point_v<T>) {
          parsed.push_back(static_cast<T>(std::stod(word, &used)));
        } else {
          parsed.push_back(static_cast<T>(std::stoi(word, &used)));
        }
        if (used != word.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        fail(field, fmt::format("bad list entry '{}'", word));
      }
    }
    out = std::move(parsed);
  }

  // Enum fields go through the module's own from_string parser.
  template <class T, class Parse>
  void choice(const std::string& field, T& out, Parse parse) {
    const auto v = raw(field);
    if (!v) return;
    try {
      out = parse(*v);
    } catch (const Error& e) {
      fail(field, e.what());
    }
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty() && !body.data().empty()) fail(section, "key outside any section");
      for (const auto& [key, value] : body) {
        const std::string field = section + "." + key;
        if (!used_.contains(field)) fail(field, "unknown key");
      }
    }
  }

 private:
  const pt::ptree& tree_;
  std::map<std::string, int> lines_;
  std::string source_;
  std::set<std::string> used_;
};

KernelMode kernel_mode_from_string(const std::string& s) {
  if (s == "strict") return KernelMode::strict;
  if (s == "clamp") return KernelMode::clamp;
  throw Error(fmt::format("unknown kernel mode '{}' (known: strict, clamp)", s));
}

const char* to_string(KernelMode m) { return m == KernelMode::strict ? "strict" : "clamp"; }

std::string join(const auto& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt::format("{}", v[i]);
  return s;
}

}  // namespace

InferenceSpec RunConfig::inference() const {
  return InferenceSpec(make_scheduler(), TimeGrid(model.horizon, dt), kernel);
}

RewardFn RunConfig::make_reward() const { return dfm::make_reward(reward, space); }

std::string RunConfig::hash_hex() const { return hex64(hash); }

std::string RunConfig::pretrain_checkpoint() const { return out + "/pretrain_final.ckpt"; }

std::string RunConfig::finetune_checkpoint() const { return out + "/finetune_final.ckpt"; }

std::string RunConfig::samples_path() const { return samples.empty() ? out + "/samples.txt" : samples; }

std::string RunConfig::canonical() const {
  std::string s;
  auto put = [&](const char* key, const auto& value) { s += fmt::format("{}={}\n", key, value); };
  put("run.seed", seed);
  put("run.out", out);
  put("run.threads", threads);
  put("space.d", space.d);
  put("space.M", space.M);
  put("space.mask", space.has_mask);
  put("space.enumeration_cap", space.enumeration_cap);
  put("path.scheduler", to_string(scheduler));
  put("path.horizon", model.horizon);
  put("path.eps_fraction", eps_fraction);
  put("path.dt", dt);
  put("path.kernel", to_string(kernel));
  put("model.spec", model.describe());
  put("model.init_seed", init_seed);
  put("corpus.path", corpus);
  put("corpus.generator", generator.generator);
  put("corpus.n", corpus_n);
  put("corpus.probs", join(generator.probs));
  put("corpus.motif", join(generator.motif));
  put("corpus.rate", generator.rate);
  put("corpus.probs_a", join(generator.probs_a));
  put("corpus.probs_b", join(generator.probs_b));
  put("corpus.weight", generator.weight);
  put("pretrain.steps", pretrain_steps);
  put("pretrain.batch", pretrain_batch);
  put("pretrain.optimizer", to_string(pretrain_opt.kind));
  put("pretrain.lr", pretrain_opt.lr);
  put("pretrain.checkpoint_every", checkpoint_every);
  put("reward.spec", reward);
  put("finetune.algorithm", to_string(algorithm));
  put("finetune.checkpoint", checkpoint);
  put("finetune.iterations", iterations);
  put("finetune.batch", batch);
  put("finetune.optimizer", to_string(finetune_opt.kind));
  put("finetune.lr", finetune_opt.lr);
  put("finetune.clip", ppo.clip);
  put("finetune.epochs", ppo.epochs);
  put("finetune.advantage", to_string(advantage.kind));
  put("finetune.min_group_size", advantage.min_group_size);
  put("regularizer.kind", to_string(reg.kind));
  put("regularizer.lambda", reg.lambda);
  put("regularizer.source", to_string(reg.source));
  put("regularizer.refresh", reg.refresh);
  put("regularizer.reference_rollouts", reg.reference_rollouts);
  put("eval.checkpoint", eval_checkpoint);
  put("eval.samples", samples);
  put("eval.n", eval_samples);
  put("eval.kmer", kmer);
  put("eval.tv_cap", tv_cap);
  put("verify.check", check);
  put("verify.samples", verify_samples);
  return s;
}

void RunConfig::rehash() { hash = fnv1a(canonical()); }

RunConfig parse_config(const std::string& text, const std::string& source) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source, static_cast<int>(e.line()), "syntax", e.message());
  }
  Reader r(tree, index_lines(text), source);
  RunConfig c;
  c.source = source;

  r.num("run.seed", c.seed);
  r.str("run.out", c.out);
  r.num("run.threads", c.threads, std::optional<int>(1), std::optional<int>(256));

  r.num("space.d", c.space.d, std::optional<int>(1));
  r.num("space.M", c.space.M, std::optional<int>(2));
  r.flag("space.mask", c.space.has_mask);
  r.num("space.enumeration_cap", c.space.enumeration_cap, std::optional<std::uint64_t>(1));

  double horizon = 1.0;
  r.choice("path.scheduler", c.scheduler, scheduler_kind_from_string);
  r.num("path.horizon", horizon);
  if (!(horizon > 0.0)) r.fail("path.horizon", "must be positive");
  r.num("path.eps_fraction", c.eps_fraction, std::optional<double>(0.0), std::optional<double>(0.5));
  r.num("path.dt", c.dt);
  if (!(c.dt > 0.0 && c.dt <= horizon)) r.fail("path.dt", "must lie in (0, horizon]");
  r.choice("path.kernel", c.kernel, kernel_mode_from_string);

  c.model.space = c.space;
  c.model.horizon = horizon;
  r.choice("model.backend", c.model.backend, backend_from_string);
  r.num("model.time_bins", c.model.tabular.time_bins, std::optional<int>(1));
  int conditions = 0;
  r.num("model.conditions", conditions, std::optional<int>(0));
  c.model.tabular.conditions = conditions;
  c.model.neural.conditions = conditions;
  r.num("model.embed", c.model.neural.embed, std::optional<int>(1));
  r.num("model.hidden", c.model.neural.hidden, std::optional<int>(1));
  r.num("model.time_features", c.model.neural.time_features, std::optional<int>(0));
  if (c.model.neural.time_features % 2 != 0) r.fail("model.time_features", "must be even");
  r.num("model.cond_embed", c.model.neural.cond_embed, std::optional<int>(1));
  r.num("model.init_seed", c.init_seed);

  r.str("corpus.path", c.corpus);
  r.str("corpus.generator", c.generator.generator);
  r.num("corpus.n", c.corpus_n, std::optional<int>(1));
  r.list("corpus.probs", c.generator.probs);
  r.list("corpus.motif", c.generator.motif);
  r.num("corpus.rate", c.generator.rate, std::optional<double>(0.0), std::optional<double>(1.0));
  r.list("corpus.probs_a", c.generator.probs_a);
  r.list("corpus.probs_b", c.generator.probs_b);
  r.num("corpus.weight", c.generator.weight, std::optional<double>(0.0), std::optional<double>(1.0));

  r.num("pretrain.steps", c.pretrain_steps, std::optional<int>(0));
  r.num("pretrain.batch", c.pretrain_batch, std::optional<int>(1));
  r.choice("pretrain.optimizer", c.pretrain_opt.kind, optimizer_kind_from_string);
  r.num("pretrain.lr", c.pretrain_opt.lr, std::optional<double>(0.0));
  r.num("pretrain.checkpoint_every", c.checkpoint_every, std::optional<int>(0));

  r.str("reward.spec", c.reward);

  r.choice("finetune.algorithm", c.algorithm, algorithm_from_string);
  r.str("finetune.checkpoint", c.checkpoint);
  r.num("finetune.iterations", c.iterations, std::optional<int>(0));
  r.num("finetune.batch", c.batch, std::optional<int>(1));
  r.choice("finetune.optimizer", c.finetune_opt.kind, optimizer_kind_from_string);
  r.num("finetune.lr", c.finetune_opt.lr, std::optional<double>(0.0));
  r.num("finetune.clip", c.ppo.clip, std::optional<double>(0.0), std::optional<double>(1.0));
  r.num("finetune.epochs", c.ppo.epochs, std::optional<int>(1));
  r.choice("finetune.advantage", c.advantage.kind, advantage_kind_from_string);
  r.num("finetune.min_group_size", c.advantage.min_group_size, std::optional<int>(1));

  r.choice("regularizer.kind", c.reg.kind, reg_kind_from_string);
  r.num("regularizer.lambda", c.reg.lambda, std::optional<double>(0.0));
  r.choice("regularizer.source", c.reg.source, state_source_from_string);
  r.num("regularizer.refresh", c.reg.refresh, std::optional<int>(1));
  r.num("regularizer.reference_rollouts", c.reg.reference_rollouts, std::optional<int>(1));

  r.str("eval.checkpoint", c.eval_checkpoint);
  r.str("eval.samples", c.samples);
  r.num("eval.n", c.eval_samples, std::optional<int>(1));
  r.num("eval.kmer", c.kmer, std::optional<int>(1));
  r.num("eval.tv_cap", c.tv_cap);

  r.str("verify.check", c.check);
  r.num("verify.samples", c.verify_samples, std::optional<int>(1));

  r.reject_unknown();

  // Cross-field checks that name the field most likely at fault.
  try {
    c.space.validate();
  } catch (const Error& e) {
    r.fail("space", e.what());
  }
  try {
    (void)c.make_reward();
  } catch (const Error& e) {
    r.fail("reward.spec", e.what());
  }
  try {
    c.reg.validate();
  } catch (const Error& e) {
    r.fail("regularizer", e.what());
  }
  c.rehash();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open config '{}'", path));
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path);
}

}  // namespace dfm
