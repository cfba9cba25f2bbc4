#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfm/distribution.hpp"
#include "dfm/optimizer.hpp"
#include "dfm/path.hpp"

namespace dfm {

// Training data: samples (with optional per-sample labels) or an explicit table.
struct DataCorpus {
  StateSpace space;
  std::vector<SequenceState> samples;
  std::vector<Condition> conditions;  // empty or one per sample
  std::optional<DistributionTable> table;

  static DataCorpus from_samples(StateSpace space, std::vector<SequenceState> samples,
                                 std::vector<Condition> conditions = {});
  static DataCorpus from_table(DistributionTable table);

  // Throws on mask tokens, out-of-range tokens or a label count mismatch.
  void validate() const;
  std::size_t size() const { return table ? table->size() : samples.size(); }
  // Draws one (x1, c) pair.
  std::pair<SequenceState, Condition> draw(Rng& rng) const;
};

// One sequence per line: integer tokens separated by spaces, optional "|c" tag.
DataCorpus read_corpus(const std::string& path, const StateSpace& space);
// header, when given, becomes a leading "# ..." line that read_corpus skips.
void write_corpus(const std::string& path, const DataCorpus& corpus, const std::string& header = "");

// A fixed draw of the CDFM estimator.
struct CdfmDraw {
  double t = 0.0;
  SequenceState x1;
  SequenceState xt;
  Condition c;
  double weight = 1.0;
};

// sum_w w * sum_i D_gKL(u(., x_t | x1), u_theta(., x_t)) over off-diagonal
// entries; adds scale * gradient into `buf` when given.
double cdfm_loss(const PosteriorModel& model, const Scheduler& sched, std::span<const CdfmDraw> draws,
                 GradientBuffer* buf = nullptr, double scale = 1.0);

// Samples t ~ U[0, T - eps] and x_t ~ p_{t|x1} for every x1 in the batch;
// returns the batch-mean loss (and gradient of the mean).
double cdfm_loss(const PosteriorModel& model, const Scheduler& sched,
                 std::span<const std::pair<SequenceState, Condition>> batch, Rng& rng,
                 GradientBuffer* buf = nullptr);

// Exact expectations over (t in `times` uniformly) x data x X_t. The CDFM
// version enumerates x1 and the copy pattern; the DFM version uses the Bayes
// marginal velocity. Both return the loss and add its gradient into `buf`.
double exact_cdfm_objective(const PosteriorModel& model, const Scheduler& sched,
                            const DistributionTable& data, std::span<const double> times,
                            GradientBuffer* buf);
double exact_dfm_objective(const PosteriorModel& model, const Scheduler& sched,
                           const DistributionTable& data, std::span<const double> times,
                           GradientBuffer* buf);

struct PretrainOptions {
  int steps = 2000;
  int batch = 64;
  OptimizerState optimizer{};
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 = only the final state
  std::string checkpoint_dir;
  std::string tag;
};

struct PretrainResult {
  std::vector<double> losses;  // one per step
};

using StepCallback = std::function<void(int step, double loss)>;

// Adam on the CDFM loss. Aborts with the step index on a non-finite loss.
PretrainResult pretrain_loop(PosteriorModel& model, const Scheduler& sched, const DataCorpus& corpus,
                             PretrainOptions& opts, const StepCallback& on_step = {});

}  // namespace dfm
