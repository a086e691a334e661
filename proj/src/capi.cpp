#include "idensenet/idensenet.h"

#include <json.hpp>

#include <cstring>
#include <memory>
#include <string>

#include "idn/commands.hpp"
#include "idn/errors.hpp"

using namespace idn;
using nlohmann::json;

struct idn_model {
  RunConfig config;
  std::unique_ptr<FlowModel> model;
};

namespace {

thread_local std::string g_last_error;

idn_status fail(idn_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
idn_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return IDN_OK;
  } catch (const ConfigError& e) {
    return fail(IDN_ERR_CONFIG, e.what());
  } catch (const ShapeError& e) {
    return fail(IDN_ERR_SHAPE, e.what());
  } catch (const InversionError& e) {
    return fail(IDN_ERR_CONVERGENCE, e.what());
  } catch (const LipschitzViolation& e) {
    return fail(IDN_ERR_LIPSCHITZ, e.what());
  } catch (const IoError& e) {
    return fail(IDN_ERR_IO, e.what());
  } catch (const NumericError& e) {
    return fail(IDN_ERR_NUMERIC, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(IDN_ERR_INVALID_ARGUMENT, e.what());
  } catch (const json::exception& e) {
    return fail(IDN_ERR_CONFIG, e.what());
  } catch (const std::exception& e) {
    return fail(IDN_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(IDN_ERR_INTERNAL, "unknown error");
  }
}

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

Tensor from_rows(const double* data, std::size_t n, std::size_t d) {
  require(data != nullptr, "input array is null");
  require(n > 0, "row count must be >= 1");
  return Tensor({n, d}, std::vector<double>(data, data + n * d));
}

void to_rows(const Tensor& t, double* out) { std::memcpy(out, t.data().data(), t.size() * sizeof(double)); }

EstimatorConfig to_estimator(const idn_estimator* e) {
  EstimatorConfig c;
  if (!e) return c;
  switch (e->kind) {
    case IDN_ESTIMATOR_EXACT: c.kind = EstimatorKind::Exact; break;
    case IDN_ESTIMATOR_TRUNCATED: c.kind = EstimatorKind::Truncated; break;
    case IDN_ESTIMATOR_ROULETTE: c.kind = EstimatorKind::Roulette; break;
    default: throw std::invalid_argument("unknown estimator kind");
  }
  c.n_terms = e->n_terms;
  c.n_probes = e->n_probes;
  c.geom_p = e->geom_p;
  c.n_exact_terms = e->n_exact_terms;
  return c;
}

json parse_options(const char* text) {
  if (!text || !*text) return json::object();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("options are not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("options must be a JSON object");
  return j;
}

void only_keys(const json& j, std::initializer_list<const char*> keys) {
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* allowed : keys) ok = ok || k == allowed;
    if (!ok) throw ConfigError("unknown option '" + k + "'");
  }
}

Checkpoint open_checkpoint(const char* path) {
  require(path != nullptr, "checkpoint path is null");
  return load_checkpoint(path);
}

}  // namespace

extern "C" {

const char* idn_version(void) { return "1.0.0"; }

const char* idn_last_error(void) { return g_last_error.c_str(); }

const char* idn_status_name(idn_status status) {
  switch (status) {
    case IDN_OK: return "ok";
    case IDN_ERR_INVALID_ARGUMENT: return "invalid argument";
    case IDN_ERR_SHAPE: return "shape mismatch";
    case IDN_ERR_CONFIG: return "configuration error";
    case IDN_ERR_IO: return "i/o error";
    case IDN_ERR_CONVERGENCE: return "inversion did not converge";
    case IDN_ERR_LIPSCHITZ: return "lipschitz violation";
    case IDN_ERR_NUMERIC: return "numeric error";
    case IDN_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void idn_string_free(char* s) { std::free(s); }

idn_estimator idn_estimator_default(void) {
  const EstimatorConfig c;
  return idn_estimator{IDN_ESTIMATOR_EXACT, c.n_terms, c.n_probes, c.geom_p, c.n_exact_terms};
}

idn_status idn_estimator_parse(const char* name, idn_estimator* out) {
  return guarded([&] {
    require(name && out, "null argument");
    idn_estimator e = idn_estimator_default();
    switch (parse_estimator(name)) {
      case EstimatorKind::Exact: e.kind = IDN_ESTIMATOR_EXACT; break;
      case EstimatorKind::Truncated: e.kind = IDN_ESTIMATOR_TRUNCATED; break;
      case EstimatorKind::Roulette: e.kind = IDN_ESTIMATOR_ROULETTE; break;
    }
    *out = e;
  });
}

idn_status idn_model_create(const char* config_json, idn_model** out) {
  return guarded([&] {
    require(out != nullptr, "output handle is null");
    auto m = std::make_unique<idn_model>();
    m->config = config_from_json(config_json && *config_json ? config_json : "{}");
    m->model = build_model(m->config.model, m->config.seed);
    *out = m.release();
  });
}

idn_status idn_model_load(const char* checkpoint_path, idn_model** out) {
  return guarded([&] {
    require(out != nullptr, "output handle is null");
    Checkpoint ck = open_checkpoint(checkpoint_path);
    auto m = std::make_unique<idn_model>();
    m->config = ck.config;
    m->model = std::move(ck.model);
    *out = m.release();
  });
}

idn_status idn_model_save(idn_model* model, const char* checkpoint_path) {
  return guarded([&] {
    require(model && checkpoint_path, "null argument");
    save_checkpoint(checkpoint_path, model->config, *model->model, nullptr, 0);
  });
}

void idn_model_free(idn_model* model) { delete model; }

idn_status idn_model_dim(const idn_model* model, size_t* out) {
  return guarded([&] {
    require(model && out, "null argument");
    *out = model->model->dim();
  });
}

idn_status idn_model_param_count(idn_model* model, size_t* out) {
  return guarded([&] {
    require(model && out, "null argument");
    *out = model->model->parameter_count();
  });
}

idn_status idn_model_config(const idn_model* model, char** json_out) {
  return guarded([&] {
    require(model && json_out, "null argument");
    *json_out = dup_string(config_to_json(model->config));
  });
}

idn_status idn_model_forward(idn_model* model, const double* x, size_t n, double* z) {
  return guarded([&] {
    require(model && z, "null argument");
    to_rows(model->model->forward_value(from_rows(x, n, model->model->dim())), z);
  });
}

idn_status idn_model_log_prob(idn_model* model, const double* x, size_t n, const idn_estimator* estimator,
                              uint64_t seed, double* logp) {
  return guarded([&] {
    require(model && logp, "null argument");
    Rng rng = make_rng(seed);
    const LogProb lp = log_prob(*model->model, from_rows(x, n, model->model->dim()), to_estimator(estimator), rng);
    to_rows(lp.logp, logp);
  });
}

idn_status idn_model_invert(idn_model* model, const double* z, size_t n, double tol, int max_iter, double* x) {
  return guarded([&] {
    require(model && x, "null argument");
    to_rows(invert_model(*model->model, from_rows(z, n, model->model->dim()), InversionOptions{tol, max_iter}), x);
  });
}

idn_status idn_model_sample(idn_model* model, size_t n, uint64_t seed, double tol, int max_iter, double* x) {
  return guarded([&] {
    require(model && x, "null argument");
    Rng rng = make_rng(seed);
    to_rows(sample(*model->model, n, rng, InversionOptions{tol, max_iter}), x);
  });
}

idn_status idn_model_refresh_spectral(idn_model* model) {
  return guarded([&] {
    require(model != nullptr, "null argument");
    model->model->refresh_spectral();
  });
}

idn_status idn_train(const char* config_json, char** report_json) {
  return guarded([&] {
    require(config_json != nullptr, "config is null");
    const TrainResult r = train(config_from_json(config_json));
    if (report_json) *report_json = dup_string(to_json(r));
  });
}

idn_status idn_eval(const char* checkpoint_path, const char* options_json, const idn_estimator* estimator,
                    char** report_json) {
  return guarded([&] {
    Checkpoint ck = open_checkpoint(checkpoint_path);
    const json o = parse_options(options_json);
    only_keys(o, {"dataset", "n", "seed"});
    EvalOptions opts;
    opts.estimator = to_estimator(estimator);
    if (o.contains("dataset")) opts.dataset = o["dataset"].get<std::string>();
    if (o.contains("n")) opts.n = o["n"].get<std::uint64_t>();
    if (o.contains("seed")) opts.seed = o["seed"].get<std::uint64_t>();
    const EvalReport r = evaluate(*ck.model, ck.config, opts);
    if (report_json) *report_json = dup_string(to_json(r));
  });
}

idn_status idn_sample_to_file(const char* checkpoint_path, size_t n, uint64_t seed, double tol, int max_iter,
                              const char* out_csv, char** report_json) {
  return guarded([&] {
    require(out_csv != nullptr, "output path is null");
    Checkpoint ck = open_checkpoint(checkpoint_path);
    Rng rng = make_rng(seed);
    const Tensor x = sample(*ck.model, n, rng, InversionOptions{tol, max_iter});
    write_samples_csv(out_csv, x);
    if (report_json) {
      json j;
      j["n"] = n;
      j["path"] = out_csv;
      *report_json = dup_string(j.dump(2) + "\n");
    }
  });
}

idn_status idn_invert_check(const char* checkpoint_path, size_t n, uint64_t seed, double tol, int max_iter,
                            char** report_json) {
  return guarded([&] {
    Checkpoint ck = open_checkpoint(checkpoint_path);
    const InvertCheckReport r = invert_check(*ck.model, ck.config, n, seed, InversionOptions{tol, max_iter});
    if (report_json) *report_json = dup_string(to_json(r));
  });
}

idn_status idn_density_grid(const char* checkpoint_path, const char* options_json, const char* out_prefix,
                            char** report_json) {
  return guarded([&] {
    Checkpoint ck = open_checkpoint(checkpoint_path);
    const json o = parse_options(options_json);
    only_keys(o, {"xmin", "xmax", "ymin", "ymax", "resolution", "threshold"});
    GridOptions g;
    g.xmin = o.value("xmin", g.xmin);
    g.xmax = o.value("xmax", g.xmax);
    g.ymin = o.value("ymin", g.ymin);
    g.ymax = o.value("ymax", g.ymax);
    g.resolution = o.value("resolution", g.resolution);
    const double threshold = o.value("threshold", 0.25);
    const DensityGrid grid = density_grid(*ck.model, g);
    if (out_prefix && *out_prefix) {
      write_grid_csv(std::string(out_prefix) + ".csv", grid);
      write_grid_ppm(std::string(out_prefix) + ".ppm", grid);
    }
    if (report_json) *report_json = dup_string(to_json(grid, count_components(grid, threshold)));
  });
}

idn_status idn_analyze(double scale, const size_t* dims, size_t n_dims, size_t n_pairs, uint64_t seed,
                       char** csv_out) {
  return guarded([&] {
    require(csv_out != nullptr, "output is null");
    require(scale > 0.0, "scale must be > 0");
    TableOptions t;
    t.scale = scale;
    t.n_pairs = n_pairs;
    t.seed = seed;
    if (dims && n_dims > 0) t.dims.assign(dims, dims + n_dims);
    *csv_out = dup_string(table_report(ratio_table(t)));
  });
}

idn_status idn_bound(const char* activation, const double* betas, size_t n_betas, double* out) {
  return guarded([&] {
    require(activation && out, "null argument");
    require(n_betas == 0 || betas != nullptr, "betas are null");
    const std::vector<double> bs = betas ? std::vector<double>(betas, betas + n_betas) : std::vector<double>{};
    const auto entries = activation_bounds(parse_activation(activation), bs);
    for (std::size_t i = 0; i < entries.size(); ++i) out[i] = entries[i].bound;
  });
}

idn_status idn_sample_toy(const char* dataset, size_t n, uint64_t seed, double* out) {
  return guarded([&] {
    require(dataset && out, "null argument");
    Rng rng = make_rng(seed);
    to_rows(sample_toy(parse_dataset(dataset), n, rng), out);
  });
}

}  // extern "C"
