#include "dfm/pretrain.hpp"

#include <fmt/format.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dfm/checkpoint.hpp"
#include "dfm/error.hpp"

namespace dfm {

DataCorpus DataCorpus::from_samples(StateSpace space, std::vector<SequenceState> samples,
                                    std::vector<Condition> conditions) {
  DataCorpus c{space, std::move(samples), std::move(conditions), std::nullopt};
  c.validate();
  return c;
}

DataCorpus DataCorpus::from_table(DistributionTable table) {
  DataCorpus c{table.space(), {}, {}, std::move(table)};
  c.validate();
  return c;
}

void DataCorpus::validate() const {
  space.validate();
  if (table) {
    const auto states = enumerate_states(space);
    for (std::size_t j = 0; j < states.size(); ++j) {
      if ((*table)[j] <= 0.0) continue;
      for (int tok : states[j].tokens) {
        if (space.is_mask(tok)) throw Error("data distribution puts mass on masked states");
      }
    }
    return;
  }
  if (samples.empty()) throw Error("corpus is empty");
  if (!conditions.empty() && conditions.size() != samples.size()) {
    throw Error(fmt::format("corpus has {} samples but {} labels", samples.size(), conditions.size()));
  }
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const auto& x = samples[n];
    if (x.size() != space.d) {
      throw Error(fmt::format("corpus sample {} has length {}, expected {}", n, x.size(), space.d));
    }
    for (int tok : x.tokens) {
      if (tok < 1 || tok > space.M) {
        throw Error(fmt::format("corpus sample {} has token {} outside 1..{}", n, tok, space.M));
      }
    }
  }
}

std::pair<SequenceState, Condition> DataCorpus::draw(Rng& rng) const {
  if (table) {
    const auto j = static_cast<std::size_t>(sample_categorical(table->mass(), rng));
    return {state_at(space, j), std::nullopt};
  }
  const auto n = std::uniform_int_distribution<std::size_t>(0, samples.size() - 1)(rng);
  return {samples[n], conditions.empty() ? Condition{} : conditions[n]};
}

DataCorpus read_corpus(const std::string& path, const StateSpace& space) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open corpus '{}'", path));
  std::vector<SequenceState> samples;
  std::vector<Condition> labels;
  std::string line;
  int lineno = 0;
  bool any_label = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    Condition c;
    if (const auto bar = line.find('|'); bar != std::string::npos) {
      try {
        c = std::stoi(line.substr(bar + 1));
      } catch (const std::exception&) {
        throw Error(fmt::format("{}:{}: bad condition tag", path, lineno));
      }
      line.resize(bar);
      any_label = true;
    }
    std::istringstream ss(line);
    std::vector<int> toks;
    std::string word;
    while (ss >> word) {
      try {
        std::size_t used = 0;
        toks.push_back(std::stoi(word, &used));
        if (used != word.size()) throw Error("");
      } catch (const std::exception&) {
        throw Error(fmt::format("{}:{}: bad token '{}'", path, lineno, word));
      }
    }
    samples.emplace_back(std::move(toks));
    labels.push_back(c);
  }
  if (any_label) {
    for (std::size_t n = 0; n < labels.size(); ++n) {
      if (!labels[n]) throw Error(fmt::format("{}: sample {} lacks a condition tag", path, n + 1));
    }
  } else {
    labels.clear();
  }
  return DataCorpus::from_samples(space, std::move(samples), std::move(labels));
}

void write_corpus(const std::string& path, const DataCorpus& corpus, const std::string& header) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write corpus '{}'", path));
  if (!header.empty()) out << "# " << header << '\n';
  for (std::size_t n = 0; n < corpus.samples.size(); ++n) {
    out << to_string(corpus.samples[n]);
    if (!corpus.conditions.empty() && corpus.conditions[n]) out << " |" << *corpus.conditions[n];
    out << '\n';
  }
}

namespace {

// gKL between the conditional and model velocities at one state; adds
// scale * d/dp into grad.
double draw_loss(const StateSpace& space, const Posterior& fwd, const SequenceState& x1,
                 const SequenceState& xt, double speed, double scale, std::span<double> grad) {
  const auto m = static_cast<std::size_t>(space.M);
  double loss = 0.0;
  for (int i = 0; i < space.d; ++i) {
    if (!position_active(space, xt, i)) continue;
    const auto p = fwd.position(i);
    for (int y = 1; y <= space.M; ++y) {
      if (y == xt[i]) continue;
      const auto yi = static_cast<std::size_t>(y - 1);
      const double u = (xt[i] != x1[i] && y == x1[i]) ? speed : 0.0;
      const double v = speed * p[yi];
      if (u > 0.0) loss += u * std::log(u / v);
      loss += v - u;
      if (!grad.empty()) grad[static_cast<std::size_t>(i) * m + yi] += scale * (speed - u / p[yi]);
    }
  }
  return loss;
}

}  // namespace

double cdfm_loss(const PosteriorModel& model, const Scheduler& sched, std::span<const CdfmDraw> draws,
                 GradientBuffer* buf, double scale) {
  const StateSpace& space = model.space();
  double total = 0.0;
  std::vector<double> g;
  for (const CdfmDraw& dr : draws) {
    const Posterior fwd = model.forward(dr.xt, std::min(dr.t, sched.t_max()), dr.c);
    const bool want = buf != nullptr && scale != 0.0;
    if (want) g.assign(fwd.probs.size(), 0.0);
    total += dr.weight * draw_loss(space, fwd, dr.x1, dr.xt, sched.speed(dr.t), scale * dr.weight,
                                   want ? std::span<double>(g) : std::span<double>());
    if (want) model.backward(fwd, g, *buf);
  }
  return total;
}

double cdfm_loss(const PosteriorModel& model, const Scheduler& sched,
                 std::span<const std::pair<SequenceState, Condition>> batch, Rng& rng,
                 GradientBuffer* buf) {
  if (batch.empty()) throw Error("empty CDFM batch");
  std::vector<CdfmDraw> draws;
  draws.reserve(batch.size());
  const double w = 1.0 / static_cast<double>(batch.size());
  std::uniform_real_distribution<double> tdist(0.0, sched.t_max());
  for (const auto& [x1, c] : batch) {
    const double t = tdist(rng);
    const ConditionalPathSample s = sample_xt(model.space(), sched, x1, t, rng);
    draws.push_back({t, x1, s.xt, c, w});
  }
  return cdfm_loss(model, sched, draws, buf, 1.0);
}

namespace {

// Calls fn(xt, prob) for every copy pattern of x1 at time t.
template <typename Fn>
void for_each_xt(const StateSpace& space, const SequenceState& x1, double kappa, Fn fn) {
  const int d = space.d;
  for (std::uint64_t bits = 0; bits < (1ULL << d); ++bits) {
    SequenceState xt = x1;
    double prob = 1.0;
    for (int i = 0; i < d; ++i) {
      if (bits & (1ULL << i)) {
        prob *= kappa;
      } else {
        prob *= 1.0 - kappa;
        xt[i] = space.mask_token();
      }
    }
    if (prob > 0.0) fn(xt, prob);
  }
}

void require_mask_table(const PosteriorModel& model, const DistributionTable& data) {
  if (!model.space().has_mask) throw Error("exact CDFM objectives require a mask-source space");
  if (!(data.space() == model.space())) throw Error("data table lives on a different space");
  if (model.space().d > 20) throw Error("exact CDFM objectives enumerate 2^d copy patterns");
}

}  // namespace

double exact_cdfm_objective(const PosteriorModel& model, const Scheduler& sched,
                            const DistributionTable& data, std::span<const double> times,
                            GradientBuffer* buf) {
  require_mask_table(model, data);
  const auto states = enumerate_states(data.space());
  std::vector<CdfmDraw> draws;
  const double wt = 1.0 / static_cast<double>(times.size());
  for (double t : times) {
    const double kappa = sched.kappa(std::min(t, sched.t_max())).kappa;
    for (std::size_t j = 0; j < states.size(); ++j) {
      if (data[j] <= 0.0) continue;
      for_each_xt(model.space(), states[j], kappa, [&](const SequenceState& xt, double prob) {
        draws.push_back({t, states[j], xt, std::nullopt, wt * data[j] * prob});
      });
    }
  }
  return cdfm_loss(model, sched, draws, buf, 1.0);
}

double exact_dfm_objective(const PosteriorModel& model, const Scheduler& sched,
                           const DistributionTable& data, std::span<const double> times,
                           GradientBuffer* buf) {
  require_mask_table(model, data);
  const StateSpace& space = model.space();
  const auto states = enumerate_states(space);
  const auto m = static_cast<std::size_t>(space.M);
  const double wt = 1.0 / static_cast<double>(times.size());
  double total = 0.0;
  std::vector<double> g;
  for (double t : times) {
    const double kappa = sched.kappa(std::min(t, sched.t_max())).kappa;
    const double speed = sched.speed(t);
    // Marginal p_t(x) and the unnormalized posterior mass of x1 tokens per position.
    std::vector<double> px(states.size(), 0.0);
    std::vector<std::vector<double>> post(states.size());
    for (std::size_t j = 0; j < states.size(); ++j) {
      if (data[j] <= 0.0) continue;
      for_each_xt(space, states[j], kappa, [&](const SequenceState& xt, double prob) {
        const auto k = index_of(space, xt);
        const double w = data[j] * prob;
        px[k] += w;
        auto& pk = post[k];
        if (pk.empty()) pk.assign(static_cast<std::size_t>(space.d) * m, 0.0);
        for (int i = 0; i < space.d; ++i) {
          pk[static_cast<std::size_t>(i) * m + static_cast<std::size_t>(states[j][i] - 1)] += w;
        }
      });
    }
    for (std::size_t k = 0; k < states.size(); ++k) {
      if (px[k] <= 0.0) continue;
      const SequenceState& x = states[k];
      const Posterior fwd = model.forward(x, std::min(t, sched.t_max()));
      if (buf) g.assign(fwd.probs.size(), 0.0);
      const double w = wt * px[k];
      double loss = 0.0;
      for (int i = 0; i < space.d; ++i) {
        if (!position_active(space, x, i)) continue;
        for (int y = 1; y <= space.M; ++y) {
          const auto yi = static_cast<std::size_t>(i) * m + static_cast<std::size_t>(y - 1);
          // Bayes marginal velocity: speed * P(x1^i = y | x_t = x).
          const double u = speed * post[k][yi] / px[k];
          const double v = speed * fwd.probs[yi];
          if (u > 0.0) loss += u * std::log(u / v);
          loss += v - u;
          if (buf) g[yi] += w * (speed - u / fwd.probs[yi]);
        }
      }
      total += w * loss;
      if (buf) model.backward(fwd, g, *buf);
    }
  }
  return total;
}

PretrainResult pretrain_loop(PosteriorModel& model, const Scheduler& sched, const DataCorpus& corpus,
                             PretrainOptions& opts, const StepCallback& on_step) {
  corpus.validate();
  if (!(corpus.space == model.space())) {
    throw Error(fmt::format("corpus space {} differs from model space {}", corpus.space.describe(),
                            model.space().describe()));
  }
  if (opts.batch < 1 || opts.steps < 0) throw Error("pretraining needs batch >= 1 and steps >= 0");
  PretrainResult result;
  result.losses.reserve(static_cast<std::size_t>(opts.steps));
  Rng rng(seed_from({opts.seed, 0x70726574ULL}));
  GradientBuffer buf = model.make_buffer();
  std::vector<std::pair<SequenceState, Condition>> batch(static_cast<std::size_t>(opts.batch));
  auto save = [&](const std::string& name) {
    if (opts.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(opts.checkpoint_dir);
    checkpoint_save((std::filesystem::path(opts.checkpoint_dir) / name).string(), model,
                    &opts.optimizer, opts.tag);
  };
  for (int step = 0; step < opts.steps; ++step) {
    for (auto& b : batch) b = corpus.draw(rng);
    const double loss = cdfm_loss(model, sched, batch, rng, &buf);
    if (!std::isfinite(loss)) {
      throw Error(fmt::format("non-finite CDFM loss {} at step {}", loss, step));
    }
    optimizer_step(model, buf, opts.optimizer, Direction::descent);
    result.losses.push_back(loss);
    if (on_step) on_step(step, loss);
    if (opts.checkpoint_every > 0 && (step + 1) % opts.checkpoint_every == 0 && step + 1 < opts.steps) {
      save(fmt::format("pretrain_{:06d}.ckpt", step + 1));
    }
  }
  save("pretrain_final.ckpt");
  return result;
}

}  // namespace dfm
