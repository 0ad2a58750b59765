#pragma once

// Run configuration for the command-line tool. Layering: built-in defaults,
// then a JSON file, then --set overrides, then explicit flags. Every problem
// found while reading is collected into one ValidationError.

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "freehunch/errors.hpp"
#include "freehunch/experiments.hpp"

namespace freehunch {

inline const std::vector<std::string>& experiment_ids() {
  static const std::vector<std::string> ids{"toy-posterior", "correlated-dims", "cov-error", "guidance-norm",
                                            "custom-sample"};
  return ids;
}

struct TrackerSection {
  std::optional<double> space_lo;    // unset: sampler sigma_min
  std::optional<double> space_hi;    // unset: sampler sigma_max
  std::optional<double> init_sigma;  // unset: sampler sigma_max
  double curvature_tolerance = 1e-8;
  bool space_updates = true;
  BackendChoice backend = BackendChoice::Auto;
  Index rank_cap = kDefaultRankCap;

  TrackerConfig resolve(const SamplingSettings& s) const {
    TrackerConfig t = default_tracker(s);
    if (space_lo) t.space_lo = *space_lo;
    if (space_hi) t.space_hi = *space_hi;
    if (init_sigma) t.init_sigma = *init_sigma;
    t.curvature_tolerance = curvature_tolerance;
    t.space_updates = space_updates;
    t.backend = backend;
    t.rank_cap = rank_cap;
    return t;
  }
};

struct GuidanceSection {
  JacobianStrategy jacobian = JacobianStrategy::ExactOracle;
  bool fallback = true;
  bool clip = false;
  CgSettings cg = CgSettings::constant(1e-12);
};

struct RunConfig {
  std::string experiment = "toy-posterior";
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "results";
  bool timing = false;  // fills wall_ms; off keeps CSVs reproducible
  SamplingSettings sampling;
  GaussianMixture mixture = default_toy_mixture();
  LinearObservation observation = default_toy_observation();
  TrackerSection tracker;
  GuidanceSection guidance;

  struct {
    Index n_samples = 10000;
    Index reference_samples = 100000;
    std::vector<double> dps_xis{0.1, 0.3, 1.0, 3.0, 10.0};
    std::vector<std::string> methods{"dps", "pigdm", "pigdm_noscale", "freehunch", "optimal"};
    double grid_lo = -5.0;
    double grid_hi = 5.0;
    Index grid_bins = 100;
    bool explicit_transfer = true;
  } toy;

  struct {
    std::vector<Index> dims{2, 4, 6, 8, 10, 12, 14, 16, 18, 20};
    double rho = 0.999;
    double noise_std = 0.2;
    Index n_samples = 4000;
    double dps_xi = 1.0;
    std::vector<std::string> methods{"exact", "freehunch", "pigdm", "dps"};
    bool explicit_transfer = true;
  } correlated;

  struct {
    std::vector<Index> step_counts{50, 100, 200, 400};
    Index trajectories = 100;
    std::vector<SolverKind> solvers{SolverKind::Euler, SolverKind::EulerMaruyama};
  } cov_error;

  GuidanceNormConfig guidance_norm;

  struct {
    std::string method = "freehunch";  // "none" samples the prior
    double xi = 1.0;
    Index n_samples = 1000;
    bool explicit_transfer = true;
  } custom;
};

// ---------------------------------------------------------------------------
// enum names

namespace detail {

template <class E>
struct EnumNames;

template <>
struct EnumNames<SolverKind> {
  static const std::map<std::string, SolverKind>& table() {
    static const std::map<std::string, SolverKind> t{
        {"euler", SolverKind::Euler}, {"euler_maruyama", SolverKind::EulerMaruyama}, {"heun", SolverKind::Heun}};
    return t;
  }
};

template <>
struct EnumNames<JacobianStrategy> {
  static const std::map<std::string, JacobianStrategy>& table() {
    static const std::map<std::string, JacobianStrategy> t{{"exact_oracle", JacobianStrategy::ExactOracle},
                                                           {"covariance_approx", JacobianStrategy::CovarianceApprox},
                                                           {"identity", JacobianStrategy::Identity}};
    return t;
  }
};

template <>
struct EnumNames<BackendChoice> {
  static const std::map<std::string, BackendChoice>& table() {
    static const std::map<std::string, BackendChoice> t{
        {"auto", BackendChoice::Auto}, {"dense", BackendChoice::Dense}, {"low_rank", BackendChoice::LowRank}};
    return t;
  }
};

template <class E>
std::string enum_name(E value) {
  for (const auto& [name, v] : EnumNames<E>::table()) {
    if (v == value) return name;
  }
  return "unknown";
}

template <class E>
std::string enum_choices() {
  std::string out;
  for (const auto& [name, v] : EnumNames<E>::table()) out += (out.empty() ? "" : ", ") + name;
  return out;
}

inline Json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index r = 0; r < m.rows(); ++r) rows.push_back(vector_json(m.row(r).transpose()));
  return rows;
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json operator_json(const LinearOperator& op) {
  Json j{{"kind", "identity"}, {"kept", Json::array()}, {"matrix", Json::array()}, {"kernel", Json::array()}};
  std::visit(
      [&](const auto& k) {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, MaskOperator>) {
          j["kind"] = "mask";
          j["kept"] = k.kept;
        } else if constexpr (std::is_same_v<T, DenseOperator>) {
          j["kind"] = "dense";
          j["matrix"] = matrix_json(k.a);
        } else if constexpr (std::is_same_v<T, Convolution1DOperator>) {
          j["kind"] = "convolution";
          j["kernel"] = vector_json(k.kernel);
        }
      },
      op.kind());
  return j;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// serialization

inline Json to_json(const RunConfig& c) {
  Json mixture{{"weights", detail::vector_json(c.mixture.weights())}, {"means", Json::array()},
               {"covariances", Json::array()}};
  for (const auto& m : c.mixture.means()) mixture["means"].push_back(detail::vector_json(m));
  for (const auto& s : c.mixture.covariances()) mixture["covariances"].push_back(detail::matrix_json(s.entries()));

  Json solvers = Json::array();
  for (SolverKind s : c.cov_error.solvers) solvers.push_back(detail::enum_name(s));

  return Json{
      {"experiment", c.experiment},
      {"seeds", c.seeds},
      {"output_dir", c.output_dir},
      {"timing", c.timing},
      {"sampler",
       {{"solver", detail::enum_name(c.sampling.solver)},
        {"steps", c.sampling.steps},
        {"sigma_min", c.sampling.sigma_min},
        {"sigma_max", c.sampling.sigma_max},
        {"rho", c.sampling.rho}}},
      {"mixture", mixture},
      {"observation",
       {{"operator", detail::operator_json(c.observation.op)},
        {"y", detail::vector_json(c.observation.y)},
        {"noise_std", c.observation.noise_std}}},
      {"tracker",
       {{"space_lo", detail::optional_json(c.tracker.space_lo)},
        {"space_hi", detail::optional_json(c.tracker.space_hi)},
        {"init_sigma", detail::optional_json(c.tracker.init_sigma)},
        {"curvature_tolerance", c.tracker.curvature_tolerance},
        {"space_updates", c.tracker.space_updates},
        {"backend", detail::enum_name(c.tracker.backend)},
        {"rank_cap", c.tracker.rank_cap}}},
      {"guidance",
       {{"jacobian", detail::enum_name(c.guidance.jacobian)},
        {"fallback", c.guidance.fallback},
        {"clip", c.guidance.clip},
        {"cg",
         {{"rtol_max", c.guidance.cg.rtol_max},
          {"rtol_min", c.guidance.cg.rtol_min},
          {"sigma_lo", c.guidance.cg.sigma_lo},
          {"sigma_hi", c.guidance.cg.sigma_hi},
          {"p", c.guidance.cg.p},
          {"max_iterations", c.guidance.cg.max_iterations},
          {"direct", c.guidance.cg.direct}}}}},
      {"toy_posterior",
       {{"n_samples", c.toy.n_samples},
        {"reference_samples", c.toy.reference_samples},
        {"dps_xis", c.toy.dps_xis},
        {"methods", c.toy.methods},
        {"grid_lo", c.toy.grid_lo},
        {"grid_hi", c.toy.grid_hi},
        {"grid_bins", c.toy.grid_bins},
        {"explicit_transfer", c.toy.explicit_transfer}}},
      {"correlated_dims",
       {{"dims", c.correlated.dims},
        {"rho", c.correlated.rho},
        {"noise_std", c.correlated.noise_std},
        {"n_samples", c.correlated.n_samples},
        {"dps_xi", c.correlated.dps_xi},
        {"methods", c.correlated.methods},
        {"explicit_transfer", c.correlated.explicit_transfer}}},
      {"cov_error",
       {{"step_counts", c.cov_error.step_counts},
        {"trajectories", c.cov_error.trajectories},
        {"solvers", solvers}}},
      {"guidance_norm",
       {{"dims", c.guidance_norm.dims},
        {"sigmas", c.guidance_norm.sigmas},
        {"noise_stds", c.guidance_norm.noise_stds},
        {"a", c.guidance_norm.a}}},
      {"custom_sample",
       {{"method", c.custom.method},
        {"xi", c.custom.xi},
        {"n_samples", c.custom.n_samples},
        {"explicit_transfer", c.custom.explicit_transfer}}},
  };
}

// ---------------------------------------------------------------------------
// layering and checking

namespace detail {

inline const char* json_kind(const Json& j) {
  if (j.is_null()) return "null";
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer() || j.is_number_unsigned()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  return "object";
}

inline bool kind_compatible(const Json& expected, const Json& got) {
  if (expected.is_null()) return got.is_null() || got.is_number();  // optional numbers
  if (expected.is_number_float()) return got.is_number();
  if (expected.is_number_integer() || expected.is_number_unsigned()) {
    return got.is_number_integer() || got.is_number_unsigned();
  }
  if (expected.is_boolean()) return got.is_boolean();
  if (expected.is_string()) return got.is_string();
  if (expected.is_array()) return got.is_array();
  return got.is_object();
}

/// Merges `patch` into `base`, recording unknown keys and kind mismatches
/// against the shape of `base`.
inline void overlay(Json& base, const Json& patch, const std::string& path, std::vector<std::string>& problems) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) {
      problems.push_back("unknown key '" + key + "'");
      continue;
    }
    Json& slot = base[it.key()];
    if (slot.is_object()) {
      if (!it.value().is_object()) {
        problems.push_back("'" + key + "' must be an object, got " + json_kind(it.value()));
        continue;
      }
      overlay(slot, it.value(), key, problems);
      continue;
    }
    if (!kind_compatible(slot, it.value())) {
      problems.push_back("'" + key + "' must be " + (slot.is_null() ? std::string("a number or null")
                                                                     : std::string("of type ") + json_kind(slot)) +
                         ", got " + json_kind(it.value()));
      continue;
    }
    slot = it.value();
  }
}

inline void collect_leaves(const Json& j, const std::string& path, std::vector<std::string>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (it.value().is_object()) collect_leaves(it.value(), key, out);
    else out.push_back(key);
  }
}

inline std::string section_of(const std::string& experiment) {
  std::string s = experiment;
  for (char& ch : s) {
    if (ch == '-') ch = '_';
  }
  return s;
}

/// Full dotted path for an override key. A bare name resolves when it is
/// the last component of exactly one leaf, or of exactly one leaf inside
/// the active experiment's section.
inline std::optional<std::string> resolve_key(const Json& shape, const std::string& key, const std::string& experiment,
                                              std::vector<std::string>& problems) {
  std::vector<std::string> leaves;
  collect_leaves(shape, "", leaves);
  for (const auto& l : leaves) {
    if (l == key) return l;
  }
  std::vector<std::string> matches;
  for (const auto& l : leaves) {
    if (l.size() > key.size() && l.compare(l.size() - key.size(), key.size(), key) == 0 &&
        l[l.size() - key.size() - 1] == '.') {
      matches.push_back(l);
    }
  }
  if (matches.size() == 1) return matches.front();
  if (matches.empty()) {
    problems.push_back("unknown key '" + key + "'");
    return std::nullopt;
  }
  const std::string prefix = section_of(experiment) + ".";
  std::vector<std::string> local;
  for (const auto& m : matches) {
    if (m.rfind(prefix, 0) == 0) local.push_back(m);
  }
  if (local.size() == 1) return local.front();
  std::string list;
  for (const auto& m : matches) list += (list.empty() ? "" : ", ") + m;
  problems.push_back("ambiguous key '" + key + "' (candidates: " + list + ")");
  return std::nullopt;
}

/// Value text of a --set override: JSON when it parses, else a plain string.
inline Json parse_override_value(const std::string& text) {
  Json v = Json::parse(text, nullptr, false);
  if (v.is_discarded()) return Json(text);
  return v;
}

class Reader {
 public:
  Reader(const Json& root, std::vector<std::string>& problems) : root_(root), problems_(problems) {}

  template <class T>
  T get(const std::string& path, T fallback) {
    const Json* node = find(path);
    if (!node) return fallback;
    try {
      return node->get<T>();
    } catch (const Json::exception&) {
      problems_.push_back("'" + path + "' has the wrong type");
      return fallback;
    }
  }

  std::optional<double> optional_number(const std::string& path) {
    const Json* node = find(path);
    if (!node || node->is_null()) return std::nullopt;
    return get<double>(path, 0.0);
  }

  template <class E>
  E enumeration(const std::string& path, E fallback) {
    const std::string name = get<std::string>(path, detail::enum_name(fallback));
    const auto& table = EnumNames<E>::table();
    auto it = table.find(name);
    if (it == table.end()) {
      problems_.push_back("'" + path + "' must be one of " + enum_choices<E>() + ", got '" + name + "'");
      return fallback;
    }
    return it->second;
  }

  Vector vector(const std::string& path) {
    const auto v = get<std::vector<double>>(path, {});
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
  }

  std::optional<Matrix> matrix(const Json& node, const std::string& path) {
    try {
      const auto rows = node.get<std::vector<std::vector<double>>>();
      const Index r = static_cast<Index>(rows.size());
      const Index c = r ? static_cast<Index>(rows[0].size()) : 0;
      Matrix m(r, c);
      for (Index i = 0; i < r; ++i) {
        if (static_cast<Index>(rows[static_cast<std::size_t>(i)].size()) != c) {
          problems_.push_back("'" + path + "' has rows of different lengths");
          return std::nullopt;
        }
        for (Index j = 0; j < c; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      }
      return m;
    } catch (const Json::exception&) {
      problems_.push_back("'" + path + "' must be a list of numeric rows");
      return std::nullopt;
    }
  }

  const Json* find(const std::string& path) const {
    const Json* node = &root_;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) {
      if (!node->is_object() || !node->contains(part)) return nullptr;
      node = &(*node)[part];
    }
    return node;
  }

  void problem(std::string p) { problems_.push_back(std::move(p)); }

 private:
  const Json& root_;
  std::vector<std::string>& problems_;
};

inline std::string fmt(double v) { return format_number(v); }

}  // namespace detail

/// Builds a RunConfig from a fully layered JSON document, checking ranges.
inline RunConfig from_json(const Json& j) {
  std::vector<std::string> problems;
  detail::Reader rd(j, problems);
  RunConfig c;
  const RunConfig d;

  c.experiment = rd.get<std::string>("experiment", d.experiment);
  bool known = false;
  for (const auto& id : experiment_ids()) known = known || id == c.experiment;
  if (!known) {
    std::string list;
    for (const auto& id : experiment_ids()) list += (list.empty() ? "" : ", ") + id;
    problems.push_back("'experiment' must be one of " + list + ", got '" + c.experiment + "'");
  }
  c.seeds = rd.get<std::vector<std::uint64_t>>("seeds", d.seeds);
  if (c.seeds.empty()) problems.push_back("'seeds' must list at least one seed");
  c.output_dir = rd.get<std::string>("output_dir", d.output_dir);
  c.timing = rd.get<bool>("timing", d.timing);

  // sampler
  c.sampling.solver = rd.enumeration("sampler.solver", d.sampling.solver);
  c.sampling.steps = rd.get<Index>("sampler.steps", d.sampling.steps);
  c.sampling.sigma_min = rd.get<double>("sampler.sigma_min", d.sampling.sigma_min);
  c.sampling.sigma_max = rd.get<double>("sampler.sigma_max", d.sampling.sigma_max);
  c.sampling.rho = rd.get<double>("sampler.rho", d.sampling.rho);
  if (c.sampling.steps < 2) problems.push_back("'sampler.steps' must be at least 2");
  if (!(c.sampling.sigma_min > 0.0)) problems.push_back("'sampler.sigma_min' must be positive");
  if (!(c.sampling.sigma_min < c.sampling.sigma_max)) {
    problems.push_back("'sampler.sigma_min' (" + detail::fmt(c.sampling.sigma_min) +
                       ") must be below 'sampler.sigma_max' (" + detail::fmt(c.sampling.sigma_max) + ")");
  }
  if (!(c.sampling.rho > 0.0)) problems.push_back("'sampler.rho' must be positive");

  // mixture
  {
    const Vector w = rd.vector("mixture.weights");
    std::vector<Vector> means;
    std::vector<DenseSymMatrix> covs;
    bool ok = true;
    if (const Json* node = rd.find("mixture.means")) {
      try {
        for (const auto& m : node->get<std::vector<std::vector<double>>>()) {
          means.emplace_back(Eigen::Map<const Vector>(m.data(), static_cast<Index>(m.size())));
        }
      } catch (const Json::exception&) {
        problems.push_back("'mixture.means' must be a list of numeric vectors");
        ok = false;
      }
    }
    if (const Json* node = rd.find("mixture.covariances"); node && node->is_array()) {
      for (std::size_t k = 0; k < node->size(); ++k) {
        const std::string path = "mixture.covariances[" + std::to_string(k) + "]";
        auto m = rd.matrix((*node)[k], path);
        if (!m) {
          ok = false;
          continue;
        }
        if (m->rows() != m->cols() || !m->isApprox(m->transpose(), 1e-12)) {
          problems.push_back("'" + path + "' must be a symmetric square matrix");
          ok = false;
          continue;
        }
        covs.emplace_back(*m);
      }
    }
    if (ok) {
      try {
        c.mixture = GaussianMixture(w, means, covs);
      } catch (const Error& e) {
        problems.push_back(std::string("'mixture': ") + e.what());
      }
    }
  }

  // observation
  {
    const Index n = c.mixture.dim();
    const std::string kind = rd.get<std::string>("observation.operator.kind", "identity");
    std::optional<LinearOperator> op;
    try {
      if (kind == "identity") {
        op = LinearOperator::identity(n);
      } else if (kind == "mask") {
        op = LinearOperator::mask(rd.get<std::vector<Index>>("observation.operator.kept", {}), n);
      } else if (kind == "dense") {
        if (const Json* node = rd.find("observation.operator.matrix")) {
          if (auto m = rd.matrix(*node, "observation.operator.matrix")) op = LinearOperator::dense(*m);
        }
      } else if (kind == "convolution") {
        op = LinearOperator::convolution(rd.vector("observation.operator.kernel"), n);
      } else {
        problems.push_back("'observation.operator.kind' must be one of identity, mask, dense, convolution, got '" +
                           kind + "'");
      }
    } catch (const Error& e) {
      problems.push_back(std::string("'observation.operator': ") + e.what());
    }
    const Vector y = rd.vector("observation.y");
    const double noise = rd.get<double>("observation.noise_std", d.observation.noise_std);
    if (op) {
      try {
        c.observation = LinearObservation(*op, y, noise);
      } catch (const Error& e) {
        problems.push_back(std::string("'observation': ") + e.what());
      }
    }
  }

  // tracker
  c.tracker.space_lo = rd.optional_number("tracker.space_lo");
  c.tracker.space_hi = rd.optional_number("tracker.space_hi");
  c.tracker.init_sigma = rd.optional_number("tracker.init_sigma");
  c.tracker.curvature_tolerance = rd.get<double>("tracker.curvature_tolerance", d.tracker.curvature_tolerance);
  c.tracker.space_updates = rd.get<bool>("tracker.space_updates", d.tracker.space_updates);
  c.tracker.backend = rd.enumeration("tracker.backend", d.tracker.backend);
  c.tracker.rank_cap = rd.get<Index>("tracker.rank_cap", d.tracker.rank_cap);
  {
    const TrackerConfig t = c.tracker.resolve(c.sampling);
    // an unset bound follows the sampler range, which is checked above
    if ((c.tracker.space_lo || c.tracker.space_hi) && !(t.space_lo <= t.space_hi)) {
      problems.push_back("'tracker.space_lo' (" + detail::fmt(t.space_lo) + ") must not exceed 'tracker.space_hi' (" +
                         detail::fmt(t.space_hi) + ")");
    }
    if (!(t.init_sigma > 0.0)) problems.push_back("'tracker.init_sigma' must be positive");
    if (!(t.curvature_tolerance >= 0.0)) problems.push_back("'tracker.curvature_tolerance' must be non-negative");
    if (t.rank_cap < 2) problems.push_back("'tracker.rank_cap' must be at least 2");
  }

  // guidance
  c.guidance.jacobian = rd.enumeration("guidance.jacobian", d.guidance.jacobian);
  c.guidance.fallback = rd.get<bool>("guidance.fallback", d.guidance.fallback);
  c.guidance.clip = rd.get<bool>("guidance.clip", d.guidance.clip);
  c.guidance.cg.rtol_max = rd.get<double>("guidance.cg.rtol_max", d.guidance.cg.rtol_max);
  c.guidance.cg.rtol_min = rd.get<double>("guidance.cg.rtol_min", d.guidance.cg.rtol_min);
  c.guidance.cg.sigma_lo = rd.get<double>("guidance.cg.sigma_lo", d.guidance.cg.sigma_lo);
  c.guidance.cg.sigma_hi = rd.get<double>("guidance.cg.sigma_hi", d.guidance.cg.sigma_hi);
  c.guidance.cg.p = rd.get<double>("guidance.cg.p", d.guidance.cg.p);
  c.guidance.cg.max_iterations = rd.get<Index>("guidance.cg.max_iterations", d.guidance.cg.max_iterations);
  c.guidance.cg.direct = rd.get<bool>("guidance.cg.direct", d.guidance.cg.direct);
  try {
    c.guidance.cg.validate();
  } catch (const Error& e) {
    problems.push_back(std::string("'guidance.cg': ") + e.what());
  }

  auto check_methods = [&](const std::vector<std::string>& methods, const std::string& path, bool allow_exact) {
    if (methods.empty()) problems.push_back("'" + path + "' must not be empty");
    for (const auto& m : methods) {
      if (allow_exact && m == "exact") continue;
      if (!parse_method(m)) problems.push_back("'" + path + "' has unknown method '" + m + "'");
    }
  };

  // toy_posterior
  c.toy.n_samples = rd.get<Index>("toy_posterior.n_samples", d.toy.n_samples);
  c.toy.reference_samples = rd.get<Index>("toy_posterior.reference_samples", d.toy.reference_samples);
  c.toy.dps_xis = rd.get<std::vector<double>>("toy_posterior.dps_xis", d.toy.dps_xis);
  c.toy.methods = rd.get<std::vector<std::string>>("toy_posterior.methods", d.toy.methods);
  c.toy.grid_lo = rd.get<double>("toy_posterior.grid_lo", d.toy.grid_lo);
  c.toy.grid_hi = rd.get<double>("toy_posterior.grid_hi", d.toy.grid_hi);
  c.toy.grid_bins = rd.get<Index>("toy_posterior.grid_bins", d.toy.grid_bins);
  c.toy.explicit_transfer = rd.get<bool>("toy_posterior.explicit_transfer", d.toy.explicit_transfer);
  if (c.toy.n_samples < 2) problems.push_back("'toy_posterior.n_samples' must be at least 2");
  if (c.toy.reference_samples < 2) problems.push_back("'toy_posterior.reference_samples' must be at least 2");
  for (double xi : c.toy.dps_xis) {
    if (!(xi > 0.0)) problems.push_back("'toy_posterior.dps_xis' entries must be positive");
  }
  check_methods(c.toy.methods, "toy_posterior.methods", false);
  if (!(c.toy.grid_lo < c.toy.grid_hi)) {
    problems.push_back("'toy_posterior.grid_lo' must be below 'toy_posterior.grid_hi'");
  }
  if (c.toy.grid_bins < 1) problems.push_back("'toy_posterior.grid_bins' must be positive");
  if (c.experiment == "toy-posterior") {
    if (c.mixture.dim() != 2) problems.push_back("toy-posterior needs a 2-D mixture");
    if (!c.observation.op.is_identity()) problems.push_back("toy-posterior needs the identity operator");
    if (!(c.observation.noise_std > 0.0)) problems.push_back("toy-posterior needs 'observation.noise_std' > 0");
  }

  // correlated_dims
  c.correlated.dims = rd.get<std::vector<Index>>("correlated_dims.dims", d.correlated.dims);
  c.correlated.rho = rd.get<double>("correlated_dims.rho", d.correlated.rho);
  c.correlated.noise_std = rd.get<double>("correlated_dims.noise_std", d.correlated.noise_std);
  c.correlated.n_samples = rd.get<Index>("correlated_dims.n_samples", d.correlated.n_samples);
  c.correlated.dps_xi = rd.get<double>("correlated_dims.dps_xi", d.correlated.dps_xi);
  c.correlated.methods = rd.get<std::vector<std::string>>("correlated_dims.methods", d.correlated.methods);
  c.correlated.explicit_transfer =
      rd.get<bool>("correlated_dims.explicit_transfer", d.correlated.explicit_transfer);
  if (c.correlated.dims.empty()) problems.push_back("'correlated_dims.dims' must not be empty");
  for (Index n : c.correlated.dims) {
    if (n < 1) problems.push_back("'correlated_dims.dims' entries must be positive");
  }
  if (!(c.correlated.rho > -1.0 && c.correlated.rho < 1.0)) {
    problems.push_back("'correlated_dims.rho' must lie in (-1, 1)");
  }
  if (!(c.correlated.noise_std > 0.0)) problems.push_back("'correlated_dims.noise_std' must be positive");
  if (c.correlated.n_samples < 2) problems.push_back("'correlated_dims.n_samples' must be at least 2");
  if (!(c.correlated.dps_xi > 0.0)) problems.push_back("'correlated_dims.dps_xi' must be positive");
  check_methods(c.correlated.methods, "correlated_dims.methods", true);

  // cov_error
  c.cov_error.step_counts = rd.get<std::vector<Index>>("cov_error.step_counts", d.cov_error.step_counts);
  c.cov_error.trajectories = rd.get<Index>("cov_error.trajectories", d.cov_error.trajectories);
  c.cov_error.solvers.clear();
  for (const auto& name : rd.get<std::vector<std::string>>("cov_error.solvers", {"euler", "euler_maruyama"})) {
    if (name == "euler") c.cov_error.solvers.push_back(SolverKind::Euler);
    else if (name == "euler_maruyama") c.cov_error.solvers.push_back(SolverKind::EulerMaruyama);
    else problems.push_back("'cov_error.solvers' entries must be euler or euler_maruyama, got '" + name + "'");
  }
  if (c.cov_error.step_counts.empty()) problems.push_back("'cov_error.step_counts' must not be empty");
  for (Index s : c.cov_error.step_counts) {
    if (s < 2) problems.push_back("'cov_error.step_counts' entries must be at least 2");
  }
  if (c.cov_error.trajectories < 1) problems.push_back("'cov_error.trajectories' must be positive");

  // guidance_norm
  c.guidance_norm.dims = rd.get<std::vector<Index>>("guidance_norm.dims", d.guidance_norm.dims);
  c.guidance_norm.sigmas = rd.get<std::vector<double>>("guidance_norm.sigmas", d.guidance_norm.sigmas);
  c.guidance_norm.noise_stds = rd.get<std::vector<double>>("guidance_norm.noise_stds", d.guidance_norm.noise_stds);
  c.guidance_norm.a = rd.get<double>("guidance_norm.a", d.guidance_norm.a);
  for (Index n : c.guidance_norm.dims) {
    if (n < 1) problems.push_back("'guidance_norm.dims' entries must be positive");
  }
  for (double s : c.guidance_norm.sigmas) {
    if (!(s > 0.0)) problems.push_back("'guidance_norm.sigmas' entries must be positive");
  }
  for (double s : c.guidance_norm.noise_stds) {
    if (!(s >= 0.0)) problems.push_back("'guidance_norm.noise_stds' entries must be non-negative");
  }
  if (!(c.guidance_norm.a != 0.0) || !std::isfinite(c.guidance_norm.a)) {
    problems.push_back("'guidance_norm.a' must be finite and non-zero");
  }

  // custom_sample
  c.custom.method = rd.get<std::string>("custom_sample.method", d.custom.method);
  c.custom.xi = rd.get<double>("custom_sample.xi", d.custom.xi);
  c.custom.n_samples = rd.get<Index>("custom_sample.n_samples", d.custom.n_samples);
  c.custom.explicit_transfer = rd.get<bool>("custom_sample.explicit_transfer", d.custom.explicit_transfer);
  if (c.custom.method != "none" && !parse_method(c.custom.method)) {
    problems.push_back("'custom_sample.method' must be none or a guidance method, got '" + c.custom.method + "'");
  }
  if (!(c.custom.xi > 0.0)) problems.push_back("'custom_sample.xi' must be positive");
  if (c.custom.n_samples < 1) problems.push_back("'custom_sample.n_samples' must be positive");

  if (!problems.empty()) throw ValidationError(std::move(problems));
  return c;
}

struct ConfigSources {
  std::optional<std::string> file;               // JSON file
  std::vector<std::string> overrides;            // "key=value", applied in order
  std::optional<std::string> experiment;         // positional argument
  std::optional<std::uint64_t> seed;             // --seed, replaces "seeds"
  std::optional<std::string> output_dir;         // --out
};

/// Defaults < file < overrides < explicit flags.
inline RunConfig parse_config(const ConfigSources& src) {
  std::vector<std::string> problems;
  Json doc = to_json(RunConfig{});
  if (src.file) {
    std::ifstream in(*src.file);
    if (!in) throw ValidationError({"cannot read config file '" + *src.file + "'"});
    Json file = Json::parse(in, nullptr, false);
    if (file.is_discarded()) throw ValidationError({"config file '" + *src.file + "' is not valid JSON"});
    if (!file.is_object()) throw ValidationError({"config file '" + *src.file + "' must hold a JSON object"});
    detail::overlay(doc, file, "", problems);
  }
  const std::string experiment = src.experiment.value_or(doc.value("experiment", std::string()));
  for (const auto& item : src.overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      problems.push_back("override '" + item + "' must look like key=value");
      continue;
    }
    const auto key = detail::resolve_key(doc, item.substr(0, eq), experiment, problems);
    if (!key) continue;
    Json patch = Json::object();
    Json* cursor = &patch;
    std::stringstream ss(*key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) cursor = &(*cursor)[parts[i]];
    (*cursor)[parts.back()] = detail::parse_override_value(item.substr(eq + 1));
    detail::overlay(doc, patch, "", problems);
  }
  if (src.experiment) doc["experiment"] = *src.experiment;
  if (src.seed) doc["seeds"] = Json::array({*src.seed});
  if (src.output_dir) doc["output_dir"] = *src.output_dir;
  if (!problems.empty()) {
    // report layering problems together with any range problems
    try {
      from_json(doc);
    } catch (const ValidationError& e) {
      problems.insert(problems.end(), e.problems().begin(), e.problems().end());
    }
    throw ValidationError(std::move(problems));
  }
  return from_json(doc);
}

// ---------------------------------------------------------------------------
// experiment configs

inline ToyPosteriorConfig toy_posterior_config(const RunConfig& c) {
  ToyPosteriorConfig t;
  t.mixture = c.mixture;
  t.obs = c.observation;
  t.sampling = c.sampling;
  t.n_samples = c.toy.n_samples;
  t.reference_samples = c.toy.reference_samples;
  t.dps_xis = c.toy.dps_xis;
  t.methods = c.toy.methods;
  t.grid = HistogramGrid::box(2, c.toy.grid_lo, c.toy.grid_hi, c.toy.grid_bins);
  t.tracker = c.tracker.resolve(c.sampling);
  t.explicit_transfer = c.toy.explicit_transfer;
  t.jacobian = c.guidance.jacobian;
  t.fallback = c.guidance.fallback;
  t.clip = c.guidance.clip;
  t.cg = c.guidance.cg;
  t.timing = c.timing;
  return t;
}

inline CorrelatedDimsConfig correlated_dims_config(const RunConfig& c) {
  CorrelatedDimsConfig t;
  t.dims = c.correlated.dims;
  t.rho = c.correlated.rho;
  t.noise_std = c.correlated.noise_std;
  t.n_samples = c.correlated.n_samples;
  t.sampling = c.sampling;
  t.dps_xi = c.correlated.dps_xi;
  t.methods = c.correlated.methods;
  t.tracker = c.tracker.resolve(c.sampling);
  t.explicit_transfer = c.correlated.explicit_transfer;
  t.fallback = c.guidance.fallback;
  t.clip = c.guidance.clip;
  t.cg = c.guidance.cg;
  return t;
}

inline CovErrorConfig cov_error_config(const RunConfig& c) {
  CovErrorConfig t;
  t.mixture = c.mixture;
  t.obs = c.observation;
  t.step_counts = c.cov_error.step_counts;
  t.trajectories = c.cov_error.trajectories;
  t.solvers = c.cov_error.solvers;
  t.sampling = c.sampling;
  t.tracker = c.tracker.resolve(c.sampling);
  return t;
}

inline CustomSampleConfig custom_sample_config(const RunConfig& c) {
  CustomSampleConfig t;
  t.mixture = c.mixture;
  if (c.custom.method == "none") t.obs.reset();
  else t.obs = c.observation;
  t.sampling = c.sampling;
  t.method = c.custom.method == "none" ? "freehunch" : c.custom.method;
  t.xi = c.custom.xi;
  t.n_samples = c.custom.n_samples;
  t.tracker = c.tracker.resolve(c.sampling);
  t.explicit_transfer = c.custom.explicit_transfer;
  t.jacobian = c.guidance.jacobian;
  t.fallback = c.guidance.fallback;
  t.clip = c.guidance.clip;
  t.cg = c.guidance.cg;
  return t;
}

inline ExperimentReport run_experiment(const RunConfig& c, std::uint64_t seed) {
  if (c.experiment == "toy-posterior") return run_toy_posterior(toy_posterior_config(c), seed);
  if (c.experiment == "correlated-dims") return run_correlated_dims(correlated_dims_config(c), seed);
  if (c.experiment == "cov-error") return run_cov_error(cov_error_config(c), seed);
  if (c.experiment == "guidance-norm") return run_guidance_norm(c.guidance_norm, seed);
  if (c.experiment == "custom-sample") return run_custom_sample(custom_sample_config(c), seed);
  throw ValidationError({"unknown experiment '" + c.experiment + "'"});
}

}  // namespace freehunch
