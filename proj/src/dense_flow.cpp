#include "idn/dense_flow.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace idn {

std::string to_string(ConcatMode mode) { return mode == ConcatMode::Fixed ? "fixed" : "learnable"; }

ConcatMode parse_concat_mode(std::string_view name) {
  if (name == "fixed") return ConcatMode::Fixed;
  if (name == "learnable") return ConcatMode::Learnable;
  throw std::invalid_argument("unknown concat mode '" + std::string(name) + "' (expected fixed or learnable)");
}

std::string to_string(Architecture arch) { return arch == Architecture::Dense ? "dense" : "residual"; }

Architecture parse_architecture(std::string_view name) {
  if (name == "dense") return Architecture::Dense;
  if (name == "residual") return Architecture::Residual;
  throw std::invalid_argument("unknown architecture '" + std::string(name) + "' (expected dense or residual)");
}

// ---------------------------------------------------------------------------
// Learnable concatenation

namespace {

// sqrt(a^2 / (a^2 + b^2)) is exactly sqrt(0.5) when a == b.
double unit_component(double a, double b) { return std::sqrt(a * a / (a * a + b * b)); }

}  // namespace

std::pair<double, double> unit_circle_weights(double raw_eta1, double raw_eta2) {
  const double s1 = softplus(raw_eta1);
  const double s2 = softplus(raw_eta2);
  return {unit_component(s1, s2), unit_component(s2, s1)};
}

std::pair<Var, Var> unit_circle_weights(Var raw_eta1, Var raw_eta2) {
  if (raw_eta1.value().size() != 1 || raw_eta2.value().size() != 1) {
    throw ShapeError("unit_circle_weights", raw_eta1.shape(), raw_eta2.shape());
  }
  Tape& tape = raw_eta1.tape();
  const auto [e1, e2] = unit_circle_weights(raw_eta1.value()[0], raw_eta2.value()[0]);
  const std::size_t i1 = raw_eta1.id(), i2 = raw_eta2.id();
  // d eta_i / d s_j for eta = s / h, h = ||s||:
  //   d eta1/ds1 = s2^2/h^3, d eta1/ds2 = -s1 s2/h^3 (symmetric for eta2); ds/draw = sigmoid(raw).
  auto rule = [i1, i2](bool first) {
    return [i1, i2, first](Tape& tp, std::size_t self) {
      const double g = tp.grad_in(self)[0];
      const double r1 = tp.value(i1)[0], r2 = tp.value(i2)[0];
      const double s1 = softplus(r1), s2 = softplus(r2);
      const double h = std::hypot(s1, s2);
      const double h3 = h * h * h;
      const double own = first ? s2 * s2 / h3 : s1 * s1 / h3;
      const double cross = -s1 * s2 / h3;
      const double d1 = first ? own : cross;
      const double d2 = first ? cross : own;
      if (Tensor* g1 = tp.accumulate(i1)) (*g1)[0] += g * d1 * sigmoid(r1);
      if (Tensor* g2 = tp.accumulate(i2)) (*g2)[0] += g * d2 * sigmoid(r2);
    };
  };
  Var eta1 = tape.record(Tensor::scalar(e1), {raw_eta1, raw_eta2}, rule(true));
  Var eta2 = tape.record(Tensor::scalar(e2), {raw_eta1, raw_eta2}, rule(false));
  return {eta1, eta2};
}

LearnableConcat::LearnableConcat(const std::string& prefix)
    : raw_eta1(prefix + ".raw_eta1", Tensor::scalar(inverse_softplus(1.0))),
      raw_eta2(prefix + ".raw_eta2", Tensor::scalar(inverse_softplus(1.0))) {}

std::pair<double, double> LearnableConcat::normalized() const {
  return unit_circle_weights(raw_eta1.value[0], raw_eta2.value[0]);
}

// ---------------------------------------------------------------------------
// DenseLayer

namespace {

bool doubles(ActivationTag tag) { return tag == ActivationTag::CReLU || tag == ActivationTag::CLipSwish; }

std::size_t weight_rows(std::size_t growth, ActivationTag activation) {
  if (!doubles(activation)) return growth;
  if (growth % 2 != 0) {
    throw std::invalid_argument("growth must be even for width-doubling activation " + to_string(activation));
  }
  return growth / 2;
}

}  // namespace

DenseLayer::DenseLayer(const std::string& prefix, std::size_t in_dim, std::size_t growth, ActivationTag act_tag,
                       ConcatMode mode, double coeff, Rng& rng)
    : weight(prefix, weight_rows(growth, act_tag), in_dim, coeff, rng),
      activation(act_tag, prefix + ".act"),
      in_dim_(in_dim),
      out_dim_(in_dim + growth),
      mode_(mode) {
  if (mode == ConcatMode::Learnable) concat.emplace(prefix);
}

Var DenseLayer::forward(Var x, LayerTrace* trace) {
  if (x.shape().size() != 2 || x.shape()[1] != in_dim_) {
    throw ShapeError("dense layer input", x.shape(), Shape{0, in_dim_});
  }
  Tape& tape = x.tape();
  Var w = weight.effective(tape);
  Activation::Applied a = activation.apply(linear(x, w, tape.parameter(weight.bias)), trace != nullptr);
  Var eta1, eta2;
  if (mode_ == ConcatMode::Learnable) {
    std::tie(eta1, eta2) = unit_circle_weights(tape.parameter(concat->raw_eta1), tape.parameter(concat->raw_eta2));
  } else {
    eta1 = eta2 = tape.constant(Tensor::scalar(std::sqrt(0.5)));
  }
  if (trace) *trace = LayerTrace{w, a.derivative, eta1, eta2};
  return concat_scaled(x, eta1, a.out, eta2);
}

Var DenseLayer::tangent(const LayerTrace& trace, Var t) const {
  Var lower = activation.tangent(trace.derivative, linear(t, trace.weight));
  return concat_scaled(t, trace.eta1, lower, trace.eta2);
}

std::pair<double, double> DenseLayer::concat_weights() const {
  if (mode_ == ConcatMode::Learnable) return concat->normalized();
  return {std::sqrt(0.5), std::sqrt(0.5)};
}

double DenseLayer::lipschitz_bound() const {
  const auto [e1, e2] = concat_weights();
  return concat_lipschitz_bound(e1, e2 * weight.coeff * activation.lipschitz_constant());
}

std::vector<Parameter*> DenseLayer::parameters() {
  std::vector<Parameter*> out{&weight.raw, &weight.bias};
  for (Parameter* p : activation.parameters()) out.push_back(p);
  if (concat) {
    out.push_back(&concat->raw_eta1);
    out.push_back(&concat->raw_eta2);
  }
  return out;
}

// ---------------------------------------------------------------------------
// FlowBlock

Tensor FlowBlock::g_value(const Tensor& x) {
  Tape tape(false);
  return g(tape.constant(x), nullptr).value();
}

void FlowBlock::power_iterate() {
  for (SpectralWeight* w : spectral_weights()) {
    for (int k = 0; k < w->iters_per_step; ++k) w->power_iteration_step();
  }
}

DenseBlock::DenseBlock(const std::string& prefix, std::size_t dim, std::size_t depth, std::size_t growth,
                       ActivationTag activation, ConcatMode mode, double coeff, Rng& rng)
    : dim_(dim) {
  std::size_t width = dim;
  for (std::size_t i = 0; i < depth; ++i) {
    layers.push_back(std::make_unique<DenseLayer>(prefix + ".layer" + std::to_string(i), width, growth, activation,
                                                  mode, coeff, rng));
    width = layers.back()->out_dim();
  }
  proj = std::make_unique<SpectralWeight>(prefix + ".proj", dim, width, coeff, rng);
}

Var DenseBlock::g(Var x, BlockTrace* trace) {
  if (trace) trace->layers.assign(layers.size(), {});
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) h = layers[i]->forward(h, trace ? &trace->layers[i] : nullptr);
  Tape& tape = x.tape();
  Var p = proj->effective(tape);
  if (trace) trace->proj = p;
  return linear(h, p, tape.parameter(proj->bias));
}

Var DenseBlock::jvp(const BlockTrace& trace, Var t) const {
  Var h = t;
  for (std::size_t i = 0; i < layers.size(); ++i) h = layers[i]->tangent(trace.layers[i], h);
  return linear(h, trace.proj);
}

std::vector<Parameter*> DenseBlock::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers) {
    for (Parameter* p : l->parameters()) out.push_back(p);
  }
  out.push_back(&proj->raw);
  out.push_back(&proj->bias);
  return out;
}

std::vector<SpectralWeight*> DenseBlock::spectral_weights() {
  std::vector<SpectralWeight*> out;
  for (auto& l : layers) out.push_back(&l->weight);
  out.push_back(proj.get());
  return out;
}

double DenseBlock::lipschitz_bound() const {
  double k = proj->coeff;
  for (const auto& l : layers) k *= l->lipschitz_bound();
  return k;
}

// ---------------------------------------------------------------------------
// ResidualBlock

ResidualBlock::ResidualBlock(const std::string& prefix, std::size_t dim, const std::vector<std::size_t>& hidden,
                             ActivationTag activation, double coeff, Rng& rng)
    : dim_(dim) {
  std::size_t width = dim;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    const std::string name = prefix + ".hidden" + std::to_string(i);
    auto act = std::make_unique<Activation>(activation, name + ".act");
    weights.push_back(std::make_unique<SpectralWeight>(name, weight_rows(hidden[i], activation), width,
                                                       coeff, rng));
    width = act->output_width(weights.back()->out_dim());
    activations.push_back(std::move(act));
  }
  proj = std::make_unique<SpectralWeight>(prefix + ".proj", dim, width, coeff, rng);
}

Var ResidualBlock::g(Var x, BlockTrace* trace) {
  if (x.shape().size() != 2 || x.shape()[1] != dim_) throw ShapeError("residual block input", x.shape(), Shape{0, dim_});
  Tape& tape = x.tape();
  if (trace) trace->layers.assign(weights.size(), {});
  Var h = x;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    Var w = weights[i]->effective(tape);
    Activation::Applied a = activations[i]->apply(linear(h, w, tape.parameter(weights[i]->bias)), trace != nullptr);
    if (trace) trace->layers[i] = LayerTrace{w, a.derivative, {}, {}};
    h = a.out;
  }
  Var p = proj->effective(tape);
  if (trace) trace->proj = p;
  return linear(h, p, tape.parameter(proj->bias));
}

Var ResidualBlock::jvp(const BlockTrace& trace, Var t) const {
  Var h = t;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    h = activations[i]->tangent(trace.layers[i].derivative, linear(h, trace.layers[i].weight));
  }
  return linear(h, trace.proj);
}

std::vector<Parameter*> ResidualBlock::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]->raw);
    out.push_back(&weights[i]->bias);
    for (Parameter* p : activations[i]->parameters()) out.push_back(p);
  }
  out.push_back(&proj->raw);
  out.push_back(&proj->bias);
  return out;
}

std::vector<SpectralWeight*> ResidualBlock::spectral_weights() {
  std::vector<SpectralWeight*> out;
  for (auto& w : weights) out.push_back(w.get());
  out.push_back(proj.get());
  return out;
}

double ResidualBlock::lipschitz_bound() const {
  double k = proj->coeff;
  for (std::size_t i = 0; i < weights.size(); ++i) k *= weights[i]->coeff * activations[i]->lipschitz_constant();
  return k;
}

// ---------------------------------------------------------------------------
// Parameter matching

namespace {

std::size_t activation_param_count(ActivationTag tag) {
  switch (tag) {
    case ActivationTag::LipSwish:
    case ActivationTag::CLipSwish: return 1;
    case ActivationTag::LeakyLSwish: return 2;
    default: return 0;
  }
}

std::size_t residual_count(const ModelConfig& c, const std::vector<std::size_t>& rows) {
  std::size_t n = 0;
  std::size_t width = c.dim;
  for (std::size_t r : rows) {
    n += r * width + r + activation_param_count(c.activation);
    width = doubles(c.activation) ? 2 * r : r;
  }
  return n + c.dim * width + c.dim;
}

}  // namespace

std::size_t dense_block_parameter_count(const ModelConfig& c) {
  const std::size_t rows = doubles(c.activation) ? c.growth / 2 : c.growth;
  std::size_t n = 0;
  std::size_t width = c.dim;
  for (std::size_t i = 0; i < c.depth; ++i) {
    n += rows * width + rows + activation_param_count(c.activation);
    if (c.concat == ConcatMode::Learnable) n += 2;
    width += c.growth;
  }
  return n + c.dim * width + c.dim;
}

std::vector<std::size_t> matched_residual_widths(const ModelConfig& c) {
  if (c.depth == 0) return {};
  const std::size_t target = dense_block_parameter_count(c);
  const std::size_t mult = doubles(c.activation) ? 2 : 1;
  std::vector<std::size_t> best_rows;
  std::size_t best_diff = std::numeric_limits<std::size_t>::max();
  std::size_t best_skew = 0;
  // Uniform hidden rows r; the last hidden layer may deviate within [2r/3, 3r/2] to absorb the remainder.
  for (std::size_t r = 1; r <= 4096; ++r) {
    const std::size_t lo = c.depth == 1 ? 1 : std::max<std::size_t>(1, (2 * r + 2) / 3);
    const std::size_t hi = c.depth == 1 ? 4096 : std::max(r, 3 * r / 2);
    for (std::size_t last = lo; last <= hi; ++last) {
      std::vector<std::size_t> rows(c.depth, r);
      rows.back() = last;
      const std::size_t n = residual_count(c, rows);
      const std::size_t diff = n > target ? n - target : target - n;
      const std::size_t skew = last > r ? last - r : r - last;
      if (diff < best_diff || (diff == best_diff && skew < best_skew)) {
        best_diff = diff;
        best_skew = skew;
        best_rows = rows;
      }
      if (n > target) break;
    }
    if (c.depth == 1) break;
    std::vector<std::size_t> smallest(c.depth, r);
    smallest.back() = lo;
    if (residual_count(c, smallest) > target) break;
  }
  for (std::size_t& r : best_rows) r *= mult;
  return best_rows;
}

// ---------------------------------------------------------------------------
// FlowModel

void validate(const ModelConfig& c) {
  if (c.dim == 0 || c.dim > 16) throw std::invalid_argument("model dim must be in [1, 16]");
  if (c.depth > 0 && c.growth == 0) throw std::invalid_argument("growth must be positive when depth > 0");
  if (doubles(c.activation) && c.growth % 2 != 0) {
    throw std::invalid_argument("growth must be even for activation " + to_string(c.activation));
  }
  if (!(c.coeff > 0.0 && c.coeff < 1.0)) throw std::invalid_argument("coeff must lie in (0, 1)");
}

FlowModel::FlowModel(const ModelConfig& config, Rng& rng) : config_(config) {
  validate(config_);
  const std::vector<std::size_t> hidden =
      config_.arch == Architecture::Residual ? matched_residual_widths(config_) : std::vector<std::size_t>{};
  for (std::size_t k = 0; k < config_.blocks; ++k) {
    const std::string prefix = "block" + std::to_string(k);
    if (config_.arch == Architecture::Dense) {
      blocks_.push_back(std::make_unique<DenseBlock>(prefix, config_.dim, config_.depth, config_.growth,
                                                     config_.activation, config_.concat, config_.coeff, rng));
    } else {
      blocks_.push_back(
          std::make_unique<ResidualBlock>(prefix, config_.dim, hidden, config_.activation, config_.coeff, rng));
    }
  }
}

FlowModel::Forward FlowModel::forward(Var x, bool with_traces) {
  if (x.shape().size() != 2 || x.shape()[1] != dim()) throw ShapeError("model input", x.shape(), Shape{0, dim()});
  Forward f;
  if (with_traces) f.traces.resize(blocks_.size());
  Var h = x;
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    f.inputs.push_back(h);
    h = blocks_[k]->forward(h, with_traces ? &f.traces[k] : nullptr);
  }
  f.z = h;
  return f;
}

Tensor FlowModel::forward_value(const Tensor& x, std::vector<Tensor>* cache) {
  if (x.rank() != 2 || x.cols() != dim()) throw ShapeError("model input", x.shape(), Shape{0, dim()});
  if (cache) cache->clear();
  Tensor h = x;
  for (auto& b : blocks_) {
    if (cache) cache->push_back(h);
    h = b->forward_value(h);
  }
  return h;
}

std::vector<Parameter*> FlowModel::parameters() {
  std::vector<Parameter*> out;
  for (auto& b : blocks_) {
    for (Parameter* p : b->parameters()) out.push_back(p);
  }
  return out;
}

std::size_t FlowModel::parameter_count() {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

std::vector<SpectralWeight*> FlowModel::spectral_weights() {
  std::vector<SpectralWeight*> out;
  for (auto& b : blocks_) {
    for (SpectralWeight* w : b->spectral_weights()) out.push_back(w);
  }
  return out;
}

std::vector<LearnableConcat*> FlowModel::concats() {
  std::vector<LearnableConcat*> out;
  for (auto& b : blocks_) {
    if (auto* d = dynamic_cast<DenseBlock*>(b.get())) {
      for (auto& l : d->layers) {
        if (l->concat) out.push_back(&*l->concat);
      }
    }
  }
  return out;
}

void FlowModel::power_iterate() {
  for (auto& b : blocks_) b->power_iterate();
}

void FlowModel::refresh_spectral(int min_iters, int max_iters) {
  for (SpectralWeight* w : spectral_weights()) w->converge(min_iters, max_iters);
}

std::unique_ptr<FlowModel> build_model(const ModelConfig& config, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x6d6f64656cULL);
  return std::make_unique<FlowModel>(config, rng);
}

}  // namespace idn
