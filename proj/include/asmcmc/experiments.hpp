#ifndef ASMCMC_EXPERIMENTS_HPP
#define ASMCMC_EXPERIMENTS_HPP

#include "asmcmc/core.hpp"
#include "asmcmc/diagnostics.hpp"
#include "asmcmc/estimators.hpp"
#include "asmcmc/models.hpp"
#include "asmcmc/samplers.hpp"
#include "asmcmc/smc.hpp"
#include "asmcmc/subspace.hpp"
#include "asmcmc/trace.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace asmcmc {

inline constexpr const char* kLibraryVersion = "0.1.0";

// Stream ids below 2^32 belong to replicates.
inline constexpr std::uint64_t kDatasetStream = 0xA5000001ull << 32;
inline constexpr std::uint64_t kSubspaceStream = 0xA5000002ull << 32;
inline constexpr std::uint64_t kPilotStream = 0xA5000003ull << 32;
inline constexpr std::uint64_t kEssStream = 0xA5000004ull << 32;
inline constexpr std::uint64_t kReferenceStream = 0xA5000005ull << 32;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
  std::string name = "plane";  // plane | banana | mixture | constant
  std::size_t dim = 25;
  std::size_t curvature_count = 3;
  double curvature = 0.001;
  std::optional<double> prior_variance;
  std::string tempering = "data";  // data | annealing
  std::size_t stages = 6;

  bool operator==(const ModelConfig&) const = default;
};

struct DatasetConfig {
  std::optional<std::string> path;
  std::uint64_t seed = 1;
  std::size_t size = 100;

  bool operator==(const DatasetConfig&) const = default;
};

struct SubspaceConfig {
  std::size_t active_dim = 1;
  std::size_t gradient_samples = 10000;
  std::optional<std::string> split_path;
  double gap_threshold = 10.0;
  double ess_threshold = 50.0;  // percent
  std::size_t ess_particles = 10000;
  double ess_point = 0.0;

  bool operator==(const SubspaceConfig&) const = default;
};

struct TuningConfig {
  std::size_t pilot_steps = 10000;
  double pilot_burn_in = 0.2;
  double scale_multiplier = 1.0;  // applied to every outer random-walk proposal
  std::string start = "pilot";    // pilot | prior

  bool operator==(const TuningConfig&) const = default;
};

struct AlgorithmConfig {
  std::string name = "mh";
  std::size_t particles = 10;  // N_i, or N_a for as-pmmh-i and as-mwpg
  std::optional<std::size_t> iterations;
  std::string inner_proposal = "prior-conditional";  // prior-conditional | random-walk (as-mwg, as-mwpg)
  std::string smc_move = "adaptive";                 // adaptive | prior
  double resample_threshold = 0.5;
  std::size_t moves_per_stage = 1;
  std::optional<std::size_t> stages;  // overrides the model's T

  bool operator==(const AlgorithmConfig&) const = default;
};

struct ReferenceConfig {
  std::string kind = "auto";  // auto | conjugate | banana-exact | long-mh | none
  std::size_t steps = 1000000;

  bool operator==(const ReferenceConfig&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::size_t replicates = 1;
  std::size_t workers = 1;
  std::optional<std::uint64_t> budget;
  std::string budget_convention = "reweight-only";  // reweight-only | with-moves
  double burn_in = 0.1;
  std::string estimator = "weighted";  // weighted | single
  std::string output_dir = "out";
  bool write_traces = true;
  ModelConfig model;
  DatasetConfig dataset;
  SubspaceConfig subspace;
  TuningConfig tuning;
  ReferenceConfig reference;
  std::vector<AlgorithmConfig> algorithms;

  bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

using nlohmann::json;

template <typename T>
void read_field(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::config_validation, where + "." + key + ": wrong type");
  }
}

template <typename T>
void read_optional(const json& j, const char* key, std::optional<T>& out, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v{};
  read_field(j, key, v, where);
  out = v;
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::config_validation, where + ": expected an object");
  for (const auto& item : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; })) {
      throw Error(ErrorCode::config_validation, where + "." + item.key() + ": unknown field");
    }
  }
}

template <typename T>
void write_optional(json& j, const char* key, const std::optional<T>& v) {
  j[key] = v ? json(*v) : json(nullptr);
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["replicates"] = c.replicates;
  j["workers"] = c.workers;
  detail::write_optional(j, "budget", c.budget);
  j["budget_convention"] = c.budget_convention;
  j["burn_in"] = c.burn_in;
  j["estimator"] = c.estimator;
  j["output_dir"] = c.output_dir;
  j["write_traces"] = c.write_traces;
  json& m = j["model"];
  m["name"] = c.model.name;
  m["dim"] = c.model.dim;
  m["curvature_count"] = c.model.curvature_count;
  m["curvature"] = c.model.curvature;
  detail::write_optional(m, "prior_variance", c.model.prior_variance);
  m["tempering"] = c.model.tempering;
  m["stages"] = c.model.stages;
  json& d = j["dataset"];
  detail::write_optional(d, "path", c.dataset.path);
  d["seed"] = c.dataset.seed;
  d["size"] = c.dataset.size;
  json& s = j["subspace"];
  s["active_dim"] = c.subspace.active_dim;
  s["gradient_samples"] = c.subspace.gradient_samples;
  detail::write_optional(s, "split_path", c.subspace.split_path);
  s["gap_threshold"] = c.subspace.gap_threshold;
  s["ess_threshold"] = c.subspace.ess_threshold;
  s["ess_particles"] = c.subspace.ess_particles;
  s["ess_point"] = c.subspace.ess_point;
  json& t = j["tuning"];
  t["pilot_steps"] = c.tuning.pilot_steps;
  t["pilot_burn_in"] = c.tuning.pilot_burn_in;
  t["scale_multiplier"] = c.tuning.scale_multiplier;
  t["start"] = c.tuning.start;
  json& r = j["reference"];
  r["kind"] = c.reference.kind;
  r["steps"] = c.reference.steps;
  json& algs = j["algorithms"];
  algs = json::array();
  for (const auto& a : c.algorithms) {
    json ja;
    ja["name"] = a.name;
    ja["particles"] = a.particles;
    detail::write_optional(ja, "iterations", a.iterations);
    ja["inner_proposal"] = a.inner_proposal;
    ja["smc_move"] = a.smc_move;
    ja["resample_threshold"] = a.resample_threshold;
    ja["moves_per_stage"] = a.moves_per_stage;
    detail::write_optional(ja, "stages", a.stages);
    algs.push_back(ja);
  }
  return j;
}

inline void validate(const ExperimentConfig& c);

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::read_field;
  using detail::read_optional;
  ExperimentConfig c;
  detail::reject_unknown(j,
                         {"name", "seed", "replicates", "workers", "budget", "budget_convention", "burn_in", "estimator",
                          "output_dir", "write_traces", "model", "dataset", "subspace", "tuning", "reference",
                          "algorithms"},
                         "config");
  read_field(j, "name", c.name, "config");
  read_field(j, "seed", c.seed, "config");
  read_field(j, "replicates", c.replicates, "config");
  read_field(j, "workers", c.workers, "config");
  read_optional(j, "budget", c.budget, "config");
  read_field(j, "budget_convention", c.budget_convention, "config");
  read_field(j, "burn_in", c.burn_in, "config");
  read_field(j, "estimator", c.estimator, "config");
  read_field(j, "output_dir", c.output_dir, "config");
  read_field(j, "write_traces", c.write_traces, "config");
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown(m, {"name", "dim", "curvature_count", "curvature", "prior_variance", "tempering", "stages"},
                           "model");
    read_field(m, "name", c.model.name, "model");
    read_field(m, "dim", c.model.dim, "model");
    read_field(m, "curvature_count", c.model.curvature_count, "model");
    read_field(m, "curvature", c.model.curvature, "model");
    read_optional(m, "prior_variance", c.model.prior_variance, "model");
    read_field(m, "tempering", c.model.tempering, "model");
    read_field(m, "stages", c.model.stages, "model");
  }
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::reject_unknown(d, {"path", "seed", "size"}, "dataset");
    read_optional(d, "path", c.dataset.path, "dataset");
    read_field(d, "seed", c.dataset.seed, "dataset");
    read_field(d, "size", c.dataset.size, "dataset");
  }
  if (j.contains("subspace")) {
    const auto& s = j.at("subspace");
    detail::reject_unknown(s,
                           {"active_dim", "gradient_samples", "split_path", "gap_threshold", "ess_threshold",
                            "ess_particles", "ess_point"},
                           "subspace");
    read_field(s, "active_dim", c.subspace.active_dim, "subspace");
    read_field(s, "gradient_samples", c.subspace.gradient_samples, "subspace");
    read_optional(s, "split_path", c.subspace.split_path, "subspace");
    read_field(s, "gap_threshold", c.subspace.gap_threshold, "subspace");
    read_field(s, "ess_threshold", c.subspace.ess_threshold, "subspace");
    read_field(s, "ess_particles", c.subspace.ess_particles, "subspace");
    read_field(s, "ess_point", c.subspace.ess_point, "subspace");
  }
  if (j.contains("tuning")) {
    const auto& t = j.at("tuning");
    detail::reject_unknown(t, {"pilot_steps", "pilot_burn_in", "scale_multiplier", "start"}, "tuning");
    read_field(t, "pilot_steps", c.tuning.pilot_steps, "tuning");
    read_field(t, "pilot_burn_in", c.tuning.pilot_burn_in, "tuning");
    read_field(t, "scale_multiplier", c.tuning.scale_multiplier, "tuning");
    read_field(t, "start", c.tuning.start, "tuning");
  }
  if (j.contains("reference")) {
    const auto& r = j.at("reference");
    detail::reject_unknown(r, {"kind", "steps"}, "reference");
    read_field(r, "kind", c.reference.kind, "reference");
    read_field(r, "steps", c.reference.steps, "reference");
  }
  if (j.contains("algorithms")) {
    const auto& algs = j.at("algorithms");
    if (!algs.is_array()) throw Error(ErrorCode::config_validation, "config.algorithms: expected an array");
    for (std::size_t k = 0; k < algs.size(); ++k) {
      const std::string where = "algorithms[" + std::to_string(k) + "]";
      const auto& ja = algs[k];
      detail::reject_unknown(ja,
                             {"name", "particles", "iterations", "inner_proposal", "smc_move", "resample_threshold",
                              "moves_per_stage", "stages"},
                             where);
      AlgorithmConfig a;
      read_field(ja, "name", a.name, where);
      read_field(ja, "particles", a.particles, where);
      read_optional(ja, "iterations", a.iterations, where);
      read_field(ja, "inner_proposal", a.inner_proposal, where);
      read_field(ja, "smc_move", a.smc_move, where);
      read_field(ja, "resample_threshold", a.resample_threshold, where);
      read_field(ja, "moves_per_stage", a.moves_per_stage, where);
      read_optional(ja, "stages", a.stages, where);
      c.algorithms.push_back(a);
    }
  }
  validate(c);
  return c;
}

inline std::string serialize(const ExperimentConfig& c) { return to_json(c).dump(2); }

inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::config_validation, std::string("config: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read config " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a(to_json(c).dump()); }

inline void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::config_validation, field + ": " + why);
  };
  const std::vector<std::string> models{"plane", "banana", "mixture", "constant"};
  if (std::find(models.begin(), models.end(), c.model.name) == models.end()) fail("model.name", "unknown model '" + c.model.name + "'");
  if (c.model.name == "mixture" && c.model.dim != 4) fail("model.dim", "the mixture model has dimension 4");
  if (c.model.dim < 2) fail("model.dim", "must be at least 2");
  if (c.model.name == "banana" && c.model.curvature_count > c.model.dim) fail("model.curvature_count", "exceeds dim");
  if (c.model.tempering != "data" && c.model.tempering != "annealing") fail("model.tempering", "must be data or annealing");
  if (c.model.stages == 0) fail("model.stages", "must be positive");
  if (c.model.prior_variance && !(*c.model.prior_variance > 0.0)) fail("model.prior_variance", "must be positive");
  if (!c.dataset.path && c.dataset.size == 0) fail("dataset.size", "must be positive");
  if (c.subspace.active_dim == 0 || c.subspace.active_dim >= c.model.dim) fail("subspace.active_dim", "must be in 1..dim-1");
  if (c.subspace.gradient_samples == 0) fail("subspace.gradient_samples", "must be positive");
  if (c.subspace.ess_particles == 0) fail("subspace.ess_particles", "must be positive");
  if (c.tuning.pilot_steps < 10) fail("tuning.pilot_steps", "must be at least 10");
  if (!(c.tuning.pilot_burn_in >= 0.0 && c.tuning.pilot_burn_in < 1.0)) fail("tuning.pilot_burn_in", "must be in [0, 1)");
  if (!(c.tuning.scale_multiplier > 0.0)) fail("tuning.scale_multiplier", "must be positive");
  if (c.tuning.start != "pilot" && c.tuning.start != "prior") fail("tuning.start", "must be pilot or prior");
  const std::vector<std::string> refs{"auto", "conjugate", "banana-exact", "long-mh", "none"};
  if (std::find(refs.begin(), refs.end(), c.reference.kind) == refs.end()) fail("reference.kind", "unknown reference");
  if (c.reference.kind == "conjugate" && c.model.name != "plane") fail("reference.kind", "conjugate needs the plane model");
  if (c.reference.kind == "banana-exact" && c.model.name != "banana" && c.model.name != "plane") {
    fail("reference.kind", "banana-exact needs the banana or plane model");
  }
  if (c.replicates == 0) fail("replicates", "must be positive");
  if (c.workers == 0) fail("workers", "must be positive");
  if (c.budget_convention != "reweight-only" && c.budget_convention != "with-moves") {
    fail("budget_convention", "must be reweight-only or with-moves");
  }
  if (!(c.burn_in >= 0.0 && c.burn_in < 1.0)) fail("burn_in", "must be in [0, 1)");
  if (c.estimator != "weighted" && c.estimator != "single") fail("estimator", "must be weighted or single");
  if (c.budget && *c.budget == 0) fail("budget", "must be positive");
  for (std::size_t k = 0; k < c.algorithms.size(); ++k) {
    const auto& a = c.algorithms[k];
    const std::string where = "algorithms[" + std::to_string(k) + "]";
    try {
      (void)algorithm_from_string(a.name);
    } catch (const Error&) {
      fail(where + ".name", "unknown algorithm '" + a.name + "'");
    }
    if (a.particles == 0) fail(where + ".particles", "must be positive");
    if (a.name == "as-mwpg" && a.particles < 2) fail(where + ".particles", "conditional SMC needs at least 2");
    if (a.inner_proposal != "prior-conditional" && a.inner_proposal != "random-walk") {
      fail(where + ".inner_proposal", "must be prior-conditional or random-walk");
    }
    if (a.smc_move != "adaptive" && a.smc_move != "prior") fail(where + ".smc_move", "must be adaptive or prior");
    if (!(a.resample_threshold >= 0.0 && a.resample_threshold <= 1.0)) {
      fail(where + ".resample_threshold", "must be in [0, 1]");
    }
    if (a.stages && *a.stages == 0) fail(where + ".stages", "must be positive");
    if (!a.iterations && !c.budget) fail(where + ".iterations", "needed when no budget is set");
  }
}

// ---------------------------------------------------------------------------
// Setup shared by all replicates
// ---------------------------------------------------------------------------

inline TemperingSchedule make_schedule(const ModelConfig& m, std::size_t data_size, std::size_t stages) {
  return m.tempering == "annealing" ? TemperingSchedule::annealing(stages)
                                    : TemperingSchedule::data(data_size, stages);
}

inline std::unique_ptr<TargetModel> make_model(const ModelConfig& m, const std::vector<double>& y,
                                               std::optional<std::size_t> stages = std::nullopt) {
  const std::size_t t = stages.value_or(m.stages);
  TemperingSchedule schedule = make_schedule(m, y.size(), t);
  if (m.name == "plane") {
    return std::make_unique<PlaneModel>(m.dim, y, std::move(schedule),
                                        m.prior_variance.value_or(BananaModel::kDefaultPriorVariance));
  }
  if (m.name == "banana") {
    return std::make_unique<BananaModel>(m.dim, m.curvature_count, m.curvature, y, std::move(schedule),
                                         m.prior_variance.value_or(BananaModel::kDefaultPriorVariance));
  }
  if (m.name == "mixture") {
    return std::make_unique<MixtureModel>(y, std::move(schedule),
                                          m.prior_variance.value_or(MixtureModel::kDefaultPriorVariance));
  }
  if (m.name == "constant") {
    return std::make_unique<ConstantModel>(isotropic_prior(m.dim, m.prior_variance.value_or(1.0)), 0.0, y.size(), t);
  }
  throw Error(ErrorCode::config_validation, "model.name: unknown model '" + m.name + "'");
}

inline std::vector<double> generate_dataset(const ExperimentConfig& c) {
  RngStream rng(c.dataset.seed, kDatasetStream);
  if (c.model.name == "mixture") return generate_mixture_data(c.dataset.size, rng);
  return generate_gaussian_data(c.dataset.size, rng);
}

inline std::vector<double> load_or_generate_dataset(const ExperimentConfig& c) {
  return c.dataset.path ? read_dataset(*c.dataset.path) : generate_dataset(c);
}

inline std::uint64_t dataset_hash(const std::vector<double>& y) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (double v : y) out << v << '\n';
  return fnv1a(out.str());
}

struct IdentifyResult {
  Matrix gradient_matrix;
  SpectrumReport spectrum;
  std::vector<EssCurvePoint> ess_curve;
  std::size_t ess_selected_dim = 0;
  SubspaceSplit split;
};

inline IdentifyResult identify_subspace(const ExperimentConfig& c, const TargetModel& model, bool with_curve = true) {
  RngStream grad_rng(c.seed, kSubspaceStream);
  Matrix gm = estimate_gradient_matrix(model, c.subspace.gradient_samples, grad_rng);
  SpectrumReport spectrum = spectrum_report(gm, c.subspace.gap_threshold);
  std::vector<EssCurvePoint> curve;
  std::size_t selected = 0;
  if (with_curve) {
    RngStream ess_rng(c.seed, kEssStream);
    curve = ess_vs_dimension_curve(model, gm, c.subspace.ess_particles, ess_rng, c.subspace.ess_point);
    selected = select_active_dim_by_ess(curve, c.subspace.ess_threshold);
  }
  SubspaceSplit split = split_from_matrix(gm, c.subspace.active_dim);
  return {std::move(gm), std::move(spectrum), std::move(curve), selected, std::move(split)};
}

struct Tuning {
  Matrix posterior_covariance;
  Vector start;
  double pilot_acceptance = 0.0;
};

inline Tuning tune_proposals(const ExperimentConfig& c, const TargetModel& model) {
  RngStream rng(c.seed, kPilotStream);
  Tuning t;
  Vector init = model.prior().mean();
  const PilotResult pilot = run_adaptive_pilot(model, init, c.tuning.pilot_steps, rng, c.tuning.pilot_burn_in);
  t.posterior_covariance = pilot.covariance;
  t.pilot_acceptance = pilot.acceptance;
  t.start = c.tuning.start == "prior" ? model.prior().sample(rng) : pilot.last;
  return t;
}

inline Vector reference_mean(const ExperimentConfig& c, const TargetModel& model, const Tuning& tuning) {
  std::string kind = c.reference.kind;
  if (kind == "auto") {
    kind = c.model.name == "plane" ? "conjugate" : c.model.name == "banana" ? "banana-exact" : "none";
  }
  if (kind == "none") return Vector();
  if (kind == "conjugate") return dynamic_cast<const PlaneModel&>(model).conjugate().posterior().mean();
  if (kind == "banana-exact") return banana_posterior_mean(dynamic_cast<const BananaModel&>(model));
  RngStream rng(c.seed, kReferenceStream);
  const double d = static_cast<double>(model.dim());
  return long_mh_reference(model, (2.38 * 2.38 / d) * tuning.posterior_covariance, c.reference.steps, tuning.start,
                           rng)
      .mean;
}

// ---------------------------------------------------------------------------
// Running one sampler
// ---------------------------------------------------------------------------

struct ResolvedRun {
  Algorithm algorithm = Algorithm::mh;
  std::size_t iterations = 0;
  std::size_t stages = 1;
  BudgetPlan plan;
};

inline BudgetConvention convention_of(const ExperimentConfig& c) {
  return c.budget_convention == "with-moves" ? BudgetConvention::with_moves : BudgetConvention::reweight_only;
}

/// Resolve iteration counts and check the budget before any sampling.
inline ResolvedRun resolve_run(const ExperimentConfig& c, const AlgorithmConfig& a) {
  ResolvedRun r;
  r.algorithm = algorithm_from_string(a.name);
  r.stages = a.stages.value_or(c.model.stages);
  const bool uses_smc = r.algorithm == Algorithm::as_pmmh || r.algorithm == Algorithm::as_pmmh_inverted ||
                        r.algorithm == Algorithm::as_mwpg;
  r.plan = budget_plan(r.algorithm, a.particles, uses_smc ? r.stages : 1, a.moves_per_stage);
  const BudgetConvention conv = convention_of(c);
  if (a.iterations) {
    r.iterations = *a.iterations;
    if (c.budget) {
      const std::uint64_t projected = r.plan.charged_per_iteration(conv) * r.iterations;
      if (projected > *c.budget) {
        throw Error(ErrorCode::budget_exceeded, a.name + ": " + std::to_string(r.iterations) + " iterations need " +
                                                    std::to_string(projected) + " evaluations, over the budget of " +
                                                    std::to_string(*c.budget));
      }
    }
  } else {
    r.iterations = r.plan.iterations_for(*c.budget, conv);
  }
  return r;
}

inline SmcConfig smc_config_of(const AlgorithmConfig& a) {
  SmcConfig s;
  s.particles = a.particles;
  s.resample_threshold = a.resample_threshold;
  s.moves_per_stage = a.moves_per_stage;
  s.move = a.smc_move == "prior" ? MoveKind::prior_independence : MoveKind::adaptive_random_walk;
  return s;
}

inline ChainTrace run_algorithm(const ExperimentConfig& c, const AlgorithmConfig& a, const ResolvedRun& resolved,
                                const std::vector<double>& y, const SubspaceSplit& split, const Tuning& tuning,
                                RngStream& rng) {
  const std::unique_ptr<TargetModel> model = make_model(c.model, y, resolved.stages);
  const GaussianPriorFactorization prior = factorize_gaussian_prior(model->prior(), split);
  const double mult = c.tuning.scale_multiplier;
  const Matrix& sigma = tuning.posterior_covariance;
  const auto [a0, i0] = split.from_theta(tuning.start);
  const SmcConfig smc = smc_config_of(a);
  auto inner_spec = [&] {
    return a.inner_proposal == "random-walk"
               ? ProposalSpec::random_walk(projected_proposal_covariance(sigma, split.inactive_basis(), mult))
               : ProposalSpec::prior_conditional();
  };
  const ProposalSpec q_a = ProposalSpec::random_walk(projected_proposal_covariance(sigma, split.active_basis(), mult));

  switch (resolved.algorithm) {
    case Algorithm::mh: {
      const Matrix identity = Matrix::Identity(sigma.rows(), sigma.cols());
      return run_mh(*model, ProposalSpec::random_walk(projected_proposal_covariance(sigma, identity, mult)),
                    resolved.iterations, tuning.start, rng);
    }
    case Algorithm::as_mh:
      return run_as_mh(*model, split, prior, q_a, prior_conditional_proposal(prior), a.particles, resolved.iterations,
                       a0, rng);
    case Algorithm::as_pmmh:
      return run_as_pmmh(*model, split, prior, q_a, smc, resolved.iterations, a0, rng);
    case Algorithm::as_pmmh_inverted:
      return run_as_pmmh_inverted(
          *model, split,
          ProposalSpec::random_walk(projected_proposal_covariance(sigma, split.inactive_basis(), mult)), smc,
          resolved.iterations, i0, rng);
    case Algorithm::as_mwg:
      return run_as_mwg(*model, split, prior, inner_spec(), q_a, resolved.iterations, a0, i0, rng);
    case Algorithm::as_mwpg:
      return run_as_mwpg(*model, split, prior, inner_spec(), smc, resolved.iterations, i0, rng);
  }
  throw Error(ErrorCode::invalid_argument, "unhandled algorithm");
}

// ---------------------------------------------------------------------------
// Replicates
// ---------------------------------------------------------------------------

struct ReplicateResult {
  std::string algorithm;
  std::size_t replicate = 0;
  std::uint64_t stream_id = 0;
  std::size_t iterations = 0;
  EvaluationCounter evaluations;
  double acceptance = 0.0;
  double inner_acceptance = 0.0;
  Vector posterior_mean;
  double error = std::numeric_limits<double>::quiet_NaN();
  ModeOccupancy occupancy;
  double runtime_seconds = 0.0;
  std::optional<std::string> trace_path;
  std::optional<std::string> trace_hash;
};

/// CSV: iteration, flags, log estimate, selected index, the MH block, then θ.
inline std::string trace_csv(const ChainTrace& trace) {
  std::ostringstream out;
  out << std::setprecision(17);
  const Eigen::Index point_dim = trace.records.empty() ? 0 : trace.records.front().point.size();
  const Eigen::Index d = trace.records.empty() ? 0 : trace.theta(0).size();
  out << "iteration,accepted,inner_accepted,log_estimate,selected";
  for (Eigen::Index j = 0; j < point_dim; ++j) out << ",point_" << j + 1;
  for (Eigen::Index j = 0; j < d; ++j) out << ",theta_" << j + 1;
  out << '\n';
  for (std::size_t m = 0; m < trace.records.size(); ++m) {
    const ChainRecord& r = trace.records[m];
    out << m << ',' << int(r.accepted) << ',' << int(r.inner_accepted) << ',' << r.log_estimate << ',' << r.selected;
    for (Eigen::Index j = 0; j < point_dim; ++j) out << ',' << r.point[j];
    const Vector theta = trace.theta(m);
    for (Eigen::Index j = 0; j < d; ++j) out << ',' << theta[j];
    out << '\n';
  }
  return out.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::io, "failed writing " + path.string());
}

/// Stream for (replicate, algorithm config): equal configs share draws.
inline RngStream replicate_stream(const ExperimentConfig& c, const AlgorithmConfig& a, std::size_t replicate) {
  AlgorithmConfig key = a;
  ExperimentConfig wrapper;
  wrapper.algorithms = {key};
  const std::uint64_t tag = fnv1a(to_json(wrapper)["algorithms"].dump());
  return RngStream(c.seed, replicate).substream(tag);
}

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<double> data;
  IdentifyResult identify;
  Tuning tuning;
  Vector reference;
  std::vector<ReplicateResult> runs;  // replicate-major within each algorithm
  double wall_clock_seconds = 0.0;
};

/// Runs every (algorithm, replicate) pair on `workers` threads. Results are
/// stored by index, so they do not depend on scheduling.
inline ExperimentResult run_experiment(const ExperimentConfig& config, const std::optional<std::filesystem::path>& out_dir) {
  validate(config);
  const auto start = std::chrono::steady_clock::now();
  ExperimentResult result;
  result.config = config;
  std::vector<ResolvedRun> resolved;
  for (const auto& a : config.algorithms) resolved.push_back(resolve_run(config, a));

  result.data = load_or_generate_dataset(config);
  const std::unique_ptr<TargetModel> model = make_model(config.model, result.data);
  if (config.subspace.split_path) {
    result.identify.split = read_split(*config.subspace.split_path);
    if (result.identify.split.dim() != model->dim()) {
      throw Error(ErrorCode::dimension_mismatch, "split file dimension does not match the model");
    }
  } else {
    result.identify = identify_subspace(config, *model, false);
  }
  result.tuning = tune_proposals(config, *model);
  result.reference = reference_mean(config, *model, result.tuning);

  const std::size_t n_algs = config.algorithms.size();
  const std::size_t total = n_algs * config.replicates;
  result.runs.resize(total);
  if (out_dir) std::filesystem::create_directories(*out_dir);

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= total) return;
      {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (first_error) return;
      }
      const std::size_t alg = job / config.replicates;
      const std::size_t rep = job % config.replicates;
      try {
        const AlgorithmConfig& a = config.algorithms[alg];
        RngStream rng = replicate_stream(config, a, rep);
        const auto t0 = std::chrono::steady_clock::now();
        const ChainTrace trace =
            run_algorithm(config, a, resolved[alg], result.data, result.identify.split, result.tuning, rng);
        ReplicateResult r;
        r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.algorithm = a.name;
        r.replicate = rep;
        r.stream_id = rep;
        r.iterations = trace.iterations();
        r.evaluations = trace.evaluations;
        r.acceptance = trace.acceptance_rate();
        r.inner_acceptance = trace.inner_acceptance_rate();
        const std::size_t first = burn_in_start(trace, config.burn_in);
        r.posterior_mean = config.estimator == "single"
                               ? estimate_expectation_single(trace, identity_functional(), first)
                               : estimate_expectation_weighted(trace, identity_functional(), first);
        if (result.reference.size() > 0) r.error = posterior_mean_error(r.posterior_mean, result.reference);
        if (config.model.name == "mixture") r.occupancy = mode_occupancy(trace, first_component_mean, first);
        if (out_dir && config.write_traces) {
          const std::string csv = trace_csv(trace);
          const auto path = *out_dir / ("trace_" + std::to_string(alg) + "_" + a.name + "_r" + std::to_string(rep) + ".csv");
          write_text(path, csv);
          r.trace_path = path.filename().string();
          r.trace_hash = hex64(fnv1a(csv));
        }
        result.runs[job] = std::move(r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(config.workers, total));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  result.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

struct AlgorithmSummary {
  std::string algorithm;
  std::size_t replicates = 0;
  double median_error = std::numeric_limits<double>::quiet_NaN();
  double mean_error = std::numeric_limits<double>::quiet_NaN();
  double mean_acceptance = 0.0;
  std::uint64_t evaluations_per_run = 0;
};

/// One summary per algorithm entry, in config order.
inline std::vector<AlgorithmSummary> summarize(const ExperimentResult& result) {
  std::vector<AlgorithmSummary> out;
  const std::size_t reps = result.config.replicates;
  for (std::size_t alg = 0; alg < result.config.algorithms.size(); ++alg) {
    AlgorithmSummary s;
    s.algorithm = result.config.algorithms[alg].name;
    s.replicates = reps;
    std::vector<double> errors;
    for (std::size_t r = 0; r < reps; ++r) {
      const ReplicateResult& run = result.runs[alg * reps + r];
      if (!std::isnan(run.error)) errors.push_back(run.error);
      s.mean_acceptance += run.acceptance / static_cast<double>(reps);
      s.evaluations_per_run = std::max(s.evaluations_per_run, run.evaluations.total());
    }
    if (!errors.empty()) {
      s.median_error = median(errors);
      double sum = 0.0;
      for (double e : errors) sum += e;
      s.mean_error = sum / static_cast<double>(errors.size());
    }
    out.push_back(s);
  }
  return out;
}

/// Long format: replicate, algorithm, metric, value.
inline std::string errors_csv(const ExperimentResult& result) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "replicate,algorithm,metric,value\n";
  for (const auto& r : result.runs) {
    out << r.replicate << ',' << r.algorithm << ",error," << r.error << '\n';
    out << r.replicate << ',' << r.algorithm << ",acceptance," << r.acceptance << '\n';
    out << r.replicate << ',' << r.algorithm << ",evaluations," << r.evaluations.total() << '\n';
    if (result.config.model.name == "mixture") {
      out << r.replicate << ',' << r.algorithm << ",occupancy_negative," << r.occupancy.negative << '\n';
      out << r.replicate << ',' << r.algorithm << ",occupancy_positive," << r.occupancy.positive << '\n';
    }
  }
  return out.str();
}

inline nlohmann::json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline nlohmann::json summary_json(const ExperimentResult& result) {
  using nlohmann::json;
  json j;
  j["experiment"] = result.config.name;
  j["reference_mean"] = vector_json(result.reference);
  j["pilot_acceptance"] = result.tuning.pilot_acceptance;
  j["wall_clock_seconds"] = result.wall_clock_seconds;
  json runs = json::array();
  for (const auto& r : result.runs) {
    json jr;
    jr["algorithm"] = r.algorithm;
    jr["replicate"] = r.replicate;
    jr["stream_id"] = r.stream_id;
    jr["iterations"] = r.iterations;
    jr["evaluations"] = r.evaluations.evaluations;
    jr["move_evaluations"] = r.evaluations.move_evaluations;
    jr["acceptance"] = r.acceptance;
    jr["inner_acceptance"] = r.inner_acceptance;
    jr["posterior_mean"] = vector_json(r.posterior_mean);
    jr["error"] = std::isnan(r.error) ? json(nullptr) : json(r.error);
    if (result.config.model.name == "mixture") {
      jr["occupancy_negative"] = r.occupancy.negative;
      jr["occupancy_positive"] = r.occupancy.positive;
    }
    jr["runtime_seconds"] = r.runtime_seconds;
    if (r.trace_path) jr["trace"] = *r.trace_path;
    runs.push_back(jr);
  }
  j["runs"] = runs;
  json algs = json::array();
  for (const auto& s : summarize(result)) {
    algs.push_back({{"algorithm", s.algorithm},
                    {"replicates", s.replicates},
                    {"median_error", std::isnan(s.median_error) ? json(nullptr) : json(s.median_error)},
                    {"mean_error", std::isnan(s.mean_error) ? json(nullptr) : json(s.mean_error)},
                    {"mean_acceptance", s.mean_acceptance},
                    {"evaluations_per_run", s.evaluations_per_run}});
  }
  j["algorithms"] = algs;
  return j;
}

/// Config hash, dataset hash, library version, wall-clock and output files.
inline nlohmann::json manifest_json(const ExperimentResult& result, const std::vector<std::string>& outputs) {
  using nlohmann::json;
  json j;
  j["config_hash"] = hex64(config_hash(result.config));
  j["dataset_hash"] = hex64(dataset_hash(result.data));
  j["library_version"] = kLibraryVersion;
  j["wall_clock_seconds"] = result.wall_clock_seconds;
  j["outputs"] = outputs;
  json traces = json::object();
  for (const auto& r : result.runs) {
    if (r.trace_path && r.trace_hash) traces[*r.trace_path] = *r.trace_hash;
  }
  j["trace_hashes"] = traces;
  j["config"] = to_json(result.config);
  return j;
}

inline std::string spectrum_csv(const SpectrumReport& s) {
  std::ostringstream out;
  out << std::setprecision(17) << "index,eigenvalue,gap_ratio\n";
  for (Eigen::Index j = 0; j < s.eigenvalues.size(); ++j) {
    out << j + 1 << ',' << s.eigenvalues[j] << ',';
    if (static_cast<std::size_t>(j) < s.gap_ratios.size()) out << s.gap_ratios[static_cast<std::size_t>(j)];
    out << '\n';
  }
  return out.str();
}

inline std::string ess_curve_csv(const std::vector<EssCurvePoint>& curve) {
  std::ostringstream out;
  out << std::setprecision(17) << "d_a,d_i,ess_percent,logw_variance\n";
  for (const auto& p : curve) {
    out << p.active_dim << ',' << p.inactive_dim << ',' << p.ess_percent << ',' << p.log_weight_variance << '\n';
  }
  return out.str();
}

/// Writes the dataset, the split, spectrum.csv and (optionally) ess_curve.csv.
inline IdentifyResult run_identify(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                   bool with_curve = true) {
  validate(config);
  std::filesystem::create_directories(out_dir);
  const std::vector<double> y = load_or_generate_dataset(config);
  write_dataset((out_dir / "dataset.txt").string(), y);
  const std::unique_ptr<TargetModel> model = make_model(config.model, y);
  IdentifyResult id = identify_subspace(config, *model, with_curve);
  write_split((out_dir / "split.txt").string(), id.split);
  write_text(out_dir / "spectrum.csv", spectrum_csv(id.spectrum));
  if (with_curve) write_text(out_dir / "ess_curve.csv", ess_curve_csv(id.ess_curve));
  nlohmann::json j;
  j["spectrum_candidates"] = id.spectrum.candidates;
  j["ess_selected_active_dim"] = id.ess_selected_dim;
  j["active_dim"] = config.subspace.active_dim;
  j["dataset_hash"] = hex64(dataset_hash(y));
  write_text(out_dir / "identify.json", j.dump(2) + "\n");
  return id;
}

/// Writes dataset.txt, summary.json, errors.csv, manifest.json and the traces.
inline ExperimentResult run_and_write(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  ExperimentResult result = run_experiment(config, out_dir);
  write_dataset((out_dir / "dataset.txt").string(), result.data);
  write_split((out_dir / "split.txt").string(), result.identify.split);
  write_text(out_dir / "summary.json", summary_json(result).dump(2) + "\n");
  write_text(out_dir / "errors.csv", errors_csv(result));
  std::vector<std::string> outputs{"dataset.txt", "split.txt", "summary.json", "errors.csv"};
  for (const auto& r : result.runs) {
    if (r.trace_path) outputs.push_back(*r.trace_path);
  }
  write_text(out_dir / "manifest.json", manifest_json(result, outputs).dump(2) + "\n");
  return result;
}

/// Reads errors.csv from a finished run and tabulates the median per algorithm and metric.
inline std::string report_from_errors_csv(const std::filesystem::path& errors_path) {
  std::ifstream in(errors_path);
  if (!in) throw Error(ErrorCode::io, "cannot read " + errors_path.string());
  std::string line;
  std::getline(in, line);
  if (line != "replicate,algorithm,metric,value") throw Error(ErrorCode::io, errors_path.string() + ": unexpected header");
  std::vector<std::pair<std::string, std::string>> keys;
  std::vector<std::vector<double>> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string rep, alg, metric, value;
    std::getline(row, rep, ',');
    std::getline(row, alg, ',');
    std::getline(row, metric, ',');
    std::getline(row, value, ',');
    const std::pair<std::string, std::string> key{alg, metric};
    auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) {
      keys.push_back(key);
      values.emplace_back();
      it = keys.end() - 1;
    }
    const double v = std::strtod(value.c_str(), nullptr);
    if (!std::isnan(v)) values[static_cast<std::size_t>(it - keys.begin())].push_back(v);
  }
  std::ostringstream out;
  out << std::setprecision(6) << "algorithm,metric,count,median\n";
  for (std::size_t k = 0; k < keys.size(); ++k) {
    out << keys[k].first << ',' << keys[k].second << ',' << values[k].size() << ',' << median(values[k]) << '\n';
  }
  return out.str();
}

}  // namespace asmcmc

#endif  // ASMCMC_EXPERIMENTS_HPP
