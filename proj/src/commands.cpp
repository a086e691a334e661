#include "idn/commands.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "idn/errors.hpp"

namespace idn {

using nlohmann::json;

namespace {

double exact_sigma_max(const Tensor& w) {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      w.data().data(), static_cast<Eigen::Index>(w.rows()), static_cast<Eigen::Index>(w.cols()));
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

json estimator_json(const EstimatorConfig& e) {
  json j;
  j["kind"] = to_string(e.kind);
  if (e.kind != EstimatorKind::Exact) {
    j["n_probes"] = e.n_probes;
    if (e.kind == EstimatorKind::Truncated) j["n_terms"] = e.n_terms;
    if (e.kind == EstimatorKind::Roulette) {
      j["geom_p"] = e.geom_p;
      j["n_exact_terms"] = e.n_exact_terms;
    }
  }
  return j;
}

std::string join_path(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

bool grads_finite(const std::vector<Parameter*>& params) {
  for (const Parameter* p : params) {
    if (!p->grad.all_finite()) return false;
  }
  return true;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Lipschitz certification

LipschitzReport lipschitz_check(FlowModel& model, std::size_t n_pairs, double scale, Rng& rng) {
  LipschitzReport rep;
  for (std::size_t k = 0; k < model.size(); ++k) {
    FlowBlock& b = model.block(k);
    BlockLipschitz bl;
    for (SpectralWeight* w : b.spectral_weights()) bl.max_sigma = std::max(bl.max_sigma, exact_sigma_max(w->effective()));
    bl.bound = b.lipschitz_bound();
    bl.empirical =
        empirical_lipschitz([&b](const Tensor& x) { return b.g_value(x); }, b.dim(), n_pairs, scale, rng).max;
    rep.max_sigma = std::max(rep.max_sigma, bl.max_sigma);
    rep.max_empirical = std::max(rep.max_empirical, bl.empirical);
    rep.blocks.push_back(bl);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Training

std::pair<double, double> mean_concat_weights(FlowModel& model) {
  double e1 = 0.0, e2 = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < model.size(); ++k) {
    if (auto* d = dynamic_cast<DenseBlock*>(&model.block(k))) {
      for (auto& l : d->layers) {
        const auto [a, b] = l->concat_weights();
        e1 += a;
        e2 += b;
        ++n;
      }
    }
  }
  if (n == 0) return {0.0, 0.0};
  return {e1 / static_cast<double>(n), e2 / static_cast<double>(n)};
}

Tensor draw_dataset(const std::string& name, std::size_t n, std::size_t dim, Rng& rng) {
  if (name == "normal") return normal_tensor({n, dim}, 1.0, rng);
  if (dim != 2) throw ConfigError("toy dataset '" + name + "' is 2-dimensional but the model has dim " + std::to_string(dim));
  return sample_toy(parse_dataset(name), n, rng);
}

namespace {

constexpr double kCheckScale = 2.0;
constexpr std::size_t kCheckPairs = 10000;

// Random streams derived from the run seed.
enum Stream : std::uint64_t { kData = 1, kTest = 2, kEstimator = 3, kEvalEstimator = 4, kInvert = 5, kCheck = 6 };

class WarningLog {
 public:
  explicit WarningLog(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
    out_ << "iteration,block,check,value\n";
  }
  void add(std::uint64_t it, std::size_t block, const char* check, double value, std::ostream* progress) {
    out_ << it << ',' << block << ',' << check << ',' << format_double(value) << '\n';
    out_.flush();
    ++count_;
    if (progress) *progress << "warning: iteration " << it << " block " << block << ' ' << check << " = " << value << '\n';
  }
  std::size_t count() const { return count_; }

 private:
  std::ofstream out_;
  std::size_t count_ = 0;
};

void certify(FlowModel& model, double coeff, std::uint64_t it, Rng& rng, WarningLog& log, std::ostream* progress) {
  const LipschitzReport rep = lipschitz_check(model, kCheckPairs, kCheckScale, rng);
  for (std::size_t k = 0; k < rep.blocks.size(); ++k) {
    if (rep.blocks[k].max_sigma > coeff + 1e-6) log.add(it, k, "sigma_max", rep.blocks[k].max_sigma, progress);
    if (!(rep.blocks[k].empirical < 1.0)) log.add(it, k, "empirical_lipschitz", rep.blocks[k].empirical, progress);
  }
}

}  // namespace

TrainResult train(const RunConfig& config, std::ostream* progress) {
  validate(config);
  const auto t0 = std::chrono::steady_clock::now();
  std::error_code ec;
  std::filesystem::create_directories(config.out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + config.out_dir + "': " + ec.message());
  save_config(join_path(config.out_dir, "config.json"), config);

  TrainResult res;
  res.out_dir = config.out_dir;
  res.checkpoint = join_path(config.out_dir, "checkpoint.bin");
  res.metrics = join_path(config.out_dir, "metrics.csv");

  auto model = build_model(config.model, config.seed);
  res.param_count = model->parameter_count();
  const auto params = model->parameters();
  std::vector<Parameter*> eta_params;
  for (LearnableConcat* c : model->concats()) {
    eta_params.push_back(&c->raw_eta1);
    eta_params.push_back(&c->raw_eta2);
  }
  AdamState adam = params.empty() ? AdamState{} : adam_init(params, AdamOptions{config.lr});
  adam.options.lr = config.lr;

  const ToyDataset dataset = parse_dataset(config.dataset);
  if (config.model.dim != 2) throw ConfigError("toy training needs dim = 2");
  Rng data_rng = make_rng(config.seed, kData);
  Rng est_rng = make_rng(config.seed, kEstimator);
  Rng check_rng = make_rng(config.seed, kCheck);

  std::ofstream metrics(res.metrics, std::ios::trunc);
  if (!metrics) throw IoError("cannot open '" + res.metrics + "' for writing");
  metrics << "iteration,train_nll,mean_eta1,mean_eta2\n";
  metrics.precision(17);
  WarningLog warnings(join_path(config.out_dir, "warnings.csv"));

  save_checkpoint(res.checkpoint, config, *model, params.empty() ? nullptr : &adam, 0);
  std::uint64_t last_good = 0;

  auto diverged = [&](const std::string& what, std::uint64_t it) {
    return NumericError(what + " at iteration " + std::to_string(it) + "; last good checkpoint '" + res.checkpoint +
                        "' (iteration " + std::to_string(last_good) + ")");
  };

  for (std::uint64_t it = 1; it <= config.iterations; ++it) {
    const Tensor x = sample_toy(dataset, config.batch, data_rng);
    Tape tape(true);
    Var loss;
    try {
      loss = nll_loss(*model, tape.constant(x), config.estimator, est_rng);
    } catch (const LipschitzViolation& e) {
      throw diverged(e.what(), it);
    }
    const double value = loss.value()[0];
    for (Parameter* p : params) p->zero_grad();
    if (std::isfinite(value)) tape.backward(loss);
    if (!std::isfinite(value)) throw diverged("non-finite loss", it);
    if (!grads_finite(params)) throw diverged("non-finite gradient", it);
    if (it < config.concat_start_iteration) {
      for (Parameter* p : eta_params) p->zero_grad();
    }
    if (!params.empty()) adam_step(params, adam);
    model->power_iterate();
    res.final_train_nll = value;

    if (it % config.log_every == 0 || it == config.iterations) {
      const auto [e1, e2] = mean_concat_weights(*model);
      metrics << it << ',' << value << ',' << e1 << ',' << e2 << '\n';
      metrics.flush();
      if (progress) *progress << "iteration " << it << " train_nll " << value << '\n';
    }
    if (config.checkpoint_every != 0 && it % config.checkpoint_every == 0 && it != config.iterations) {
      certify(*model, config.model.coeff, it, check_rng, warnings, progress);
      save_checkpoint(res.checkpoint, config, *model, &adam, it);
      last_good = it;
    }
  }

  model->refresh_spectral();
  certify(*model, config.model.coeff, config.iterations, check_rng, warnings, progress);
  save_checkpoint(res.checkpoint, config, *model, params.empty() ? nullptr : &adam, config.iterations);
  res.iterations = config.iterations;
  res.warnings = warnings.count();

  Rng test_rng = make_rng(config.seed, kTest);
  const Tensor test = sample_toy(dataset, config.test_size, test_rng);
  Rng eval_rng = make_rng(config.seed, kEvalEstimator);
  res.test_nll = nll_nats(*model, test, EstimatorConfig{}, eval_rng);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text_file(join_path(config.out_dir, "summary.json"), to_json(res));
  if (progress) *progress << "test_nll " << res.test_nll << '\n';
  return res;
}

std::string to_json(const TrainResult& r) {
  json j;
  j["out_dir"] = r.out_dir;
  j["checkpoint"] = r.checkpoint;
  j["metrics"] = r.metrics;
  j["iterations"] = r.iterations;
  j["param_count"] = r.param_count;
  j["final_train_nll"] = r.final_train_nll;
  j["test_nll"] = r.test_nll;
  j["warnings"] = r.warnings;
  j["seconds"] = r.seconds;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Evaluation and sampling

EvalReport evaluate(FlowModel& model, const RunConfig& config, const EvalOptions& opts) {
  if (opts.n == 0) throw std::invalid_argument("eval needs n >= 1");
  EvalReport rep;
  rep.dataset = opts.dataset.empty() ? config.dataset : opts.dataset;
  rep.n = opts.n;
  rep.estimator = opts.estimator;
  const std::uint64_t seed = opts.seed.value_or(config.seed);
  Rng data_rng = make_rng(seed, kTest);
  const Tensor x = draw_dataset(rep.dataset, opts.n, model.dim(), data_rng);
  Rng est_rng = make_rng(seed, kEvalEstimator);

  constexpr std::size_t kChunk = 2000;
  std::vector<double> nll;
  nll.reserve(opts.n);
  rep.block_logdets.assign(model.size(), 0.0);
  for (std::size_t begin = 0; begin < x.rows(); begin += kChunk) {
    const std::size_t end = std::min(x.rows(), begin + kChunk);
    const LogProb lp = log_prob(model, x.slice_rows(begin, end), opts.estimator, est_rng);
    for (double v : lp.logp.data()) nll.push_back(-v);
    for (std::size_t k = 0; k < lp.blocks.size(); ++k) {
      rep.block_logdets[k] += lp.blocks[k].value * static_cast<double>(end - begin);
    }
  }
  for (double& v : rep.block_logdets) v /= static_cast<double>(opts.n);
  double mean = 0.0;
  for (double v : nll) mean += v;
  mean /= static_cast<double>(nll.size());
  double var = 0.0;
  for (double v : nll) var += (v - mean) * (v - mean);
  var /= static_cast<double>(std::max<std::size_t>(nll.size() - 1, 1));
  rep.nll = mean;
  rep.stderr_nll = std::sqrt(var / static_cast<double>(nll.size()));
  return rep;
}

std::string to_json(const EvalReport& r) {
  json j;
  j["dataset"] = r.dataset;
  j["n"] = r.n;
  j["estimator"] = estimator_json(r.estimator);
  j["nll"] = r.nll;
  j["stderr"] = r.stderr_nll;
  j["block_logdets"] = r.block_logdets;
  return j.dump(2) + "\n";
}

InvertCheckReport invert_check(FlowModel& model, const RunConfig& config, std::uint64_t n, std::uint64_t seed,
                               const InversionOptions& opts) {
  if (n == 0) throw std::invalid_argument("invert-check needs n >= 1");
  Rng rng = make_rng(seed, kInvert);
  const Tensor x = draw_dataset(model.dim() == 2 ? config.dataset : "normal", n, model.dim(), rng);
  const Tensor z = model.forward_value(x);
  std::vector<int> iterations;
  const Tensor back = invert_model(model, z, opts, &iterations);
  InvertCheckReport rep;
  rep.n = n;
  for (int it : iterations) rep.max_iterations = std::max(rep.max_iterations, it);
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double e = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) e = std::max(e, std::abs(x.at(r, c) - back.at(r, c)));
    rep.max_error = std::max(rep.max_error, e);
    total += e;
  }
  rep.mean_error = total / static_cast<double>(n);
  return rep;
}

std::string to_json(const InvertCheckReport& r) {
  json j;
  j["n"] = r.n;
  j["max_error"] = r.max_error;
  j["mean_error"] = r.mean_error;
  j["max_iterations"] = r.max_iterations;
  return j.dump(2) + "\n";
}

void write_samples_csv(const std::string& path, const Tensor& x) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.precision(17);
  for (std::size_t c = 0; c < x.cols(); ++c) out << (c ? "," : "") << 'x' << c;
  out << '\n';
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out << (c ? "," : "") << x.at(r, c);
    out << '\n';
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Density grids

DensityGrid density_grid(FlowModel& model, const GridOptions& opts) {
  if (model.dim() != 2) throw std::invalid_argument("density grids need a 2-dimensional model");
  if (opts.resolution == 0) throw std::invalid_argument("grid resolution must be >= 1");
  if (!(opts.xmax > opts.xmin && opts.ymax > opts.ymin)) throw std::invalid_argument("grid bounds are empty");
  const std::size_t r = opts.resolution;
  const double dx = (opts.xmax - opts.xmin) / static_cast<double>(r);
  const double dy = (opts.ymax - opts.ymin) / static_cast<double>(r);
  Tensor pts({r * r, 2});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      pts.at(i * r + j, 0) = opts.xmin + (static_cast<double>(j) + 0.5) * dx;
      pts.at(i * r + j, 1) = opts.ymin + (static_cast<double>(i) + 0.5) * dy;
    }
  }
  DensityGrid g;
  g.options = opts;
  g.density = Tensor({r, r});
  Rng unused = make_rng(0);
  constexpr std::size_t kChunk = 4096;
  for (std::size_t begin = 0; begin < r * r; begin += kChunk) {
    const std::size_t end = std::min(r * r, begin + kChunk);
    const LogProb lp = log_prob(model, pts.slice_rows(begin, end), EstimatorConfig{}, unused);
    for (std::size_t k = begin; k < end; ++k) g.density[k] = std::exp(lp.logp[k - begin]);
  }
  for (double v : g.density.data()) {
    g.mass += v * dx * dy;
    g.max_density = std::max(g.max_density, v);
  }
  return g;
}

void write_grid_csv(const std::string& path, const DensityGrid& g) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.precision(17);
  const GridOptions& o = g.options;
  const std::size_t r = o.resolution;
  const double dx = (o.xmax - o.xmin) / static_cast<double>(r);
  const double dy = (o.ymax - o.ymin) / static_cast<double>(r);
  out << "x,y,density\n";
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      out << o.xmin + (static_cast<double>(j) + 0.5) * dx << ',' << o.ymin + (static_cast<double>(i) + 0.5) * dy << ','
          << g.density.at(i, j) << '\n';
    }
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

void write_grid_ppm(const std::string& path, const DensityGrid& g) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const std::size_t r = g.options.resolution;
  out << "P6\n" << r << ' ' << r << "\n255\n";
  auto channel = [](double v) { return static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); };
  for (std::size_t i = r; i-- > 0;) {
    for (std::size_t j = 0; j < r; ++j) {
      const double t = g.max_density > 0.0 ? g.density.at(i, j) / g.max_density : 0.0;
      // black -> red -> yellow -> white
      const unsigned char rgb[3] = {channel(3.0 * t), channel(3.0 * t - 1.0), channel(3.0 * t - 2.0)};
      out.write(reinterpret_cast<const char*>(rgb), 3);
    }
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

std::size_t count_components(const DensityGrid& g, double fraction) {
  const std::size_t r = g.options.resolution;
  const double threshold = fraction * g.max_density;
  std::vector<char> seen(r * r, 0);
  std::size_t count = 0;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < r * r; ++start) {
    if (seen[start] || g.density[start] < threshold) continue;
    ++count;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t k = stack.back();
      stack.pop_back();
      const std::size_t i = k / r, j = k % r;
      const std::size_t nbr[4] = {i > 0 ? k - r : k, i + 1 < r ? k + r : k, j > 0 ? k - 1 : k, j + 1 < r ? k + 1 : k};
      for (std::size_t n : nbr) {
        if (!seen[n] && g.density[n] >= threshold) {
          seen[n] = 1;
          stack.push_back(n);
        }
      }
    }
  }
  return count;
}

std::string to_json(const DensityGrid& g, std::size_t components) {
  json j;
  j["xmin"] = g.options.xmin;
  j["xmax"] = g.options.xmax;
  j["ymin"] = g.options.ymin;
  j["ymax"] = g.options.ymax;
  j["resolution"] = g.options.resolution;
  j["mass"] = g.mass;
  j["max_density"] = g.max_density;
  j["components"] = components;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Activation analysis

std::vector<BoundEntry> activation_bounds(ActivationTag activation, const std::vector<double>& betas) {
  std::vector<BoundEntry> out;
  const std::vector<double> bs = betas.empty() ? std::vector<double>{softplus(kInitialRawBeta)} : betas;
  for (double b : bs) {
    if (!(b > 0.0)) throw std::invalid_argument("beta must be > 0");
    const double bound =
        activation == ActivationTag::CLipSwish ? clipswish_bound(b) : Activation(activation, "bound").lipschitz_constant();
    out.push_back({activation, b, bound});
  }
  return out;
}

std::string to_json(const std::vector<BoundEntry>& entries) {
  json arr = json::array();
  for (const BoundEntry& e : entries) {
    arr.push_back({{"activation", to_string(e.activation)}, {"beta", e.beta}, {"bound", e.bound}});
  }
  return arr.dump(2) + "\n";
}

}  // namespace idn
