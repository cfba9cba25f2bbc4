#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dfm/state_space.hpp"

namespace dfm {

inline constexpr double kProbabilityFloor = 1e-12;

enum class Backend { tabular, neural };

// Logits indexed by (condition, time bin, full joint state).
struct TabularArch {
  int time_bins = 1;
  int conditions = 0;  // 0 = unconditional
};

// Token embeddings + sinusoidal time features (+ condition embedding)
// -> two SiLU hidden layers -> d x M logits.
struct NeuralArch {
  int embed = 8;
  int hidden = 128;
  int time_features = 8;
  int conditions = 0;
  int cond_embed = 8;
};

struct ModelSpec {
  StateSpace space;
  double horizon = 1.0;
  Backend backend = Backend::tabular;
  TabularArch tabular;
  NeuralArch neural;

  std::size_t parameter_count() const;
  int conditions() const { return backend == Backend::tabular ? tabular.conditions : neural.conditions; }
  // One-line key=value architecture descriptor (also the checkpoint header).
  std::string describe() const;
  static ModelSpec parse(const std::string& descriptor);
  friend bool operator==(const ModelSpec& a, const ModelSpec& b) { return a.describe() == b.describe(); }
};

struct GradientBuffer {
  std::vector<double> g;
  std::size_t count = 0;

  GradientBuffer() = default;
  explicit GradientBuffer(std::size_t n) : g(n, 0.0) {}
  void zero() {
    std::fill(g.begin(), g.end(), 0.0);
    count = 0;
  }
};

// Output of one forward pass: per-position PMFs plus what backward() needs.
struct Posterior {
  int d = 0;
  int M = 0;
  std::vector<double> probs;    // floored and renormalized, d * M
  std::vector<double> softmax;  // before the floor
  std::vector<double> acts;     // neural activations
  SequenceState x;
  Condition condition;
  std::size_t table_offset = 0;
  std::uint64_t version = 0;

  std::span<const double> position(int i) const {
    return std::span<const double>(probs).subspan(static_cast<std::size_t>(i * M), static_cast<std::size_t>(M));
  }
  double p(int i, int token) const { return probs[static_cast<std::size_t>(i * M + token - 1)]; }
};

// The learned posterior p_{1|t}^theta(. | x, c). Velocities are derived from it
// through posterior_to_velocity().
class PosteriorModel {
 public:
  static PosteriorModel tabular(StateSpace space, double horizon, TabularArch arch = {});
  static PosteriorModel neural(StateSpace space, double horizon, NeuralArch arch, std::uint64_t seed);
  static PosteriorModel from_spec(const ModelSpec& spec, std::vector<double> params);

  const ModelSpec& spec() const { return spec_; }
  const StateSpace& space() const { return spec_.space; }

  Posterior forward(const SequenceState& x, double t, Condition c = {}) const;
  // Adds d(loss)/d(theta) given d(loss)/d(probs) for the pass in `fwd`.
  void backward(const Posterior& fwd, std::span<const double> grad_probs, GradientBuffer& buf) const;

  std::span<const double> params() const { return params_; }
  // Direct parameter access; call touch() after writing.
  std::vector<double>& mutable_params() { return params_; }
  void set_params(std::vector<double> params);
  void touch();
  std::uint64_t version() const { return version_; }

  GradientBuffer make_buffer() const { return GradientBuffer(params_.size()); }

  int time_bin(double t) const;
  // First of the d * M logits for a tabular cell.
  std::size_t tabular_offset(Condition c, int bin, std::size_t state_index) const;

 private:
  PosteriorModel(ModelSpec spec, std::vector<double> params);

  void forward_neural(const SequenceState& x, double t, Condition c, Posterior& out) const;
  void backward_neural(const Posterior& fwd, std::span<const double> grad_logits, GradientBuffer& buf) const;
  int condition_index(Condition c) const;

  ModelSpec spec_;
  std::vector<double> params_;
  std::uint64_t version_ = 0;
};

const char* to_string(Backend b);
Backend backend_from_string(const std::string& s);

}  // namespace dfm
