#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "idn/activations.hpp"
#include "idn/autodiff.hpp"
#include "idn/lipschitz.hpp"
#include "idn/random.hpp"

namespace idn {

enum class ConcatMode { Fixed, Learnable };
enum class Architecture { Dense, Residual };

std::string to_string(ConcatMode mode);
ConcatMode parse_concat_mode(std::string_view name);
std::string to_string(Architecture arch);
Architecture parse_architecture(std::string_view name);

/// Normalized concatenation weights (eta1, eta2) = (s1, s2) / ||(s1, s2)||, s = softplus(raw).
/// Taped primitive; when the raw values are equal both outputs are exactly sqrt(1/2).
std::pair<Var, Var> unit_circle_weights(Var raw_eta1, Var raw_eta2);
std::pair<double, double> unit_circle_weights(double raw_eta1, double raw_eta2);

/// Learnable weights on the copied and transformed halves of a dense layer.
struct LearnableConcat {
  explicit LearnableConcat(const std::string& prefix);

  /// Effective (softplus) value 1 at initialization.
  Parameter raw_eta1;
  Parameter raw_eta2;

  std::pair<double, double> normalized() const;
};

/// Per-layer values recorded during a taped forward pass, reused for Jacobian products.
struct LayerTrace {
  /// Effective weight (out x in).
  Var weight;
  Var derivative;
  Var eta1;
  Var eta2;
};

struct BlockTrace {
  std::vector<LayerTrace> layers;
  Var proj;
};

/// h(x) = [eta1 * x ; eta2 * phi(W_eff x + b)].
class DenseLayer {
 public:
  /// `growth` is the post-activation width; width-doubling activations use growth / 2 rows.
  DenseLayer(const std::string& prefix, std::size_t in_dim, std::size_t growth, ActivationTag activation,
             ConcatMode mode, double coeff, Rng& rng);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }
  ConcatMode mode() const { return mode_; }

  Var forward(Var x, LayerTrace* trace);
  Var tangent(const LayerTrace& trace, Var t) const;

  std::pair<double, double> concat_weights() const;
  /// Upper bound on Lip(h) from the concatenation rule.
  double lipschitz_bound() const;

  std::vector<Parameter*> parameters();

  SpectralWeight weight;
  Activation activation;
  std::optional<LearnableConcat> concat;

 private:
  std::size_t in_dim_;
  std::size_t out_dim_;
  ConcatMode mode_;
};

/// Residual flow block F(x) = x + g(x) with Lip(g) < 1.
class FlowBlock {
 public:
  virtual ~FlowBlock() = default;

  virtual std::size_t dim() const = 0;
  virtual std::string kind() const = 0;

  /// Taped g(x); fills `trace` when given so that jvp() can be applied.
  virtual Var g(Var x, BlockTrace* trace) = 0;
  /// J_g(x) t for each row, using a trace recorded by g().
  virtual Var jvp(const BlockTrace& trace, Var t) const = 0;

  virtual std::vector<Parameter*> parameters() = 0;
  virtual std::vector<SpectralWeight*> spectral_weights() = 0;
  /// Analytic upper bound on Lip(g).
  virtual double lipschitz_bound() const = 0;

  Var forward(Var x, BlockTrace* trace) { return add(x, g(x, trace)); }
  /// Untaped g(x).
  Tensor g_value(const Tensor& x);
  Tensor forward_value(const Tensor& x) { return x + g_value(x); }

  /// One power-iteration step on every weight (per-weight iteration count).
  void power_iterate();
};

/// g(x) = W_{n+1} h_n(...h_1(x)).
class DenseBlock : public FlowBlock {
 public:
  DenseBlock(const std::string& prefix, std::size_t dim, std::size_t depth, std::size_t growth,
             ActivationTag activation, ConcatMode mode, double coeff, Rng& rng);

  std::size_t dim() const override { return dim_; }
  std::string kind() const override { return "dense"; }
  Var g(Var x, BlockTrace* trace) override;
  Var jvp(const BlockTrace& trace, Var t) const override;
  std::vector<Parameter*> parameters() override;
  std::vector<SpectralWeight*> spectral_weights() override;
  double lipschitz_bound() const override;

  std::vector<std::unique_ptr<DenseLayer>> layers;
  std::unique_ptr<SpectralWeight> proj;

 private:
  std::size_t dim_;
};

/// g(x) = W_{n+1} phi(W_n ... phi(W_1 x)): the plain residual counterpart.
class ResidualBlock : public FlowBlock {
 public:
  /// `hidden` lists post-activation widths of the hidden layers.
  ResidualBlock(const std::string& prefix, std::size_t dim, const std::vector<std::size_t>& hidden,
                ActivationTag activation, double coeff, Rng& rng);

  std::size_t dim() const override { return dim_; }
  std::string kind() const override { return "residual"; }
  Var g(Var x, BlockTrace* trace) override;
  Var jvp(const BlockTrace& trace, Var t) const override;
  std::vector<Parameter*> parameters() override;
  std::vector<SpectralWeight*> spectral_weights() override;
  double lipschitz_bound() const override;

  std::vector<std::unique_ptr<SpectralWeight>> weights;
  std::vector<std::unique_ptr<Activation>> activations;
  std::unique_ptr<SpectralWeight> proj;

 private:
  std::size_t dim_;
};

struct ModelConfig {
  std::size_t dim = 2;
  std::size_t blocks = 10;
  std::size_t depth = 3;
  std::size_t growth = 32;
  ActivationTag activation = ActivationTag::CLipSwish;
  ConcatMode concat = ConcatMode::Learnable;
  double coeff = 0.98;
  Architecture arch = Architecture::Dense;
};

/// Throws std::invalid_argument describing the first invalid field.
void validate(const ModelConfig& config);

/// Ordered stack of flow blocks with a standard normal base density.
class FlowModel {
 public:
  FlowModel(const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }
  std::size_t dim() const { return config_.dim; }
  std::size_t size() const { return blocks_.size(); }
  FlowBlock& block(std::size_t k) { return *blocks_[k]; }
  const FlowBlock& block(std::size_t k) const { return *blocks_[k]; }

  struct Forward {
    Var z;
    /// Input to each block.
    std::vector<Var> inputs;
    std::vector<BlockTrace> traces;
  };
  Forward forward(Var x, bool with_traces);
  /// Untaped forward; optionally returns each block's input.
  Tensor forward_value(const Tensor& x, std::vector<Tensor>* cache = nullptr);

  std::vector<Parameter*> parameters();
  std::size_t parameter_count();
  std::vector<SpectralWeight*> spectral_weights();
  std::vector<LearnableConcat*> concats();

  void power_iterate();
  /// Re-estimate every sigma_hat to convergence (at least `min_iters` steps).
  void refresh_spectral(int min_iters = 50, int max_iters = 5000);

 private:
  ModelConfig config_;
  std::vector<std::unique_ptr<FlowBlock>> blocks_;
};

std::unique_ptr<FlowModel> build_model(const ModelConfig& config, std::uint64_t seed);

/// Parameter count of a single dense block for this configuration.
std::size_t dense_block_parameter_count(const ModelConfig& config);
/// Hidden widths of the residual baseline chosen to match the dense block's parameter count.
std::vector<std::size_t> matched_residual_widths(const ModelConfig& config);

}  // namespace idn
