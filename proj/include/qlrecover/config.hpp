#ifndef QLRECOVER_CONFIG_HPP
#define QLRECOVER_CONFIG_HPP

// Experiment configuration: a sectioned key-value (INI) document, see
// docs/config_schema.md for the field list.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "qlrecover/models.hpp"
#include "qlrecover/nonlocal.hpp"
#include "qlrecover/solver.hpp"

namespace qlr {

enum class ModelKind { Chemotaxis, ReactionDiffusion, LinearTest };
enum class DataSource { Zero, Manufactured, File };
enum class DataProfile { Cosine, RandomSmooth };
enum class ScanDirection { Raw, Phi };

inline std::string to_string(ModelKind k) {
  switch (k) {
  case ModelKind::Chemotaxis: return "chemotaxis";
  case ModelKind::ReactionDiffusion: return "reaction_diffusion";
  case ModelKind::LinearTest: return "linear_test";
  }
  return "?";
}
inline std::string to_string(DataSource s) {
  switch (s) {
  case DataSource::Zero: return "zero";
  case DataSource::Manufactured: return "manufactured";
  case DataSource::File: return "file";
  }
  return "?";
}
inline std::string to_string(DataProfile p) { return p == DataProfile::Cosine ? "cosine" : "random_smooth"; }
inline std::string to_string(ScanDirection d) { return d == ScanDirection::Raw ? "raw" : "phi"; }
inline std::string to_string(StepScheme s) { return s == StepScheme::CrankNicolson ? "crank_nicolson" : "backward_euler"; }

struct ModelSection {
  ModelKind kind = ModelKind::Chemotaxis;
  double ball_radius = 1.0;
  double delta = 1.0;          // chemotaxis
  double s_order = 2.25;       // chemotaxis
  double p = 4.0;              // reaction_diffusion
  double reaction = -1.0;      // reaction_diffusion: f(r) = reaction r^3
  double diffusion_gain = 1.0; // reaction_diffusion: a(s) = 1 + gain s^2
  double diffusivity = 1.0;    // linear_test: A = diffusivity Delta
  bool operator==(const ModelSection&) const = default;
};

struct GridSection {
  int n = 32;
  double length = 1.0;
  BoundaryKind bc = BoundaryKind::Neumann;
  bool operator==(const GridSection&) const = default;
};

struct TimeSection {
  double T = 0.5;
  int K = 128;
  bool operator==(const TimeSection&) const = default;
};

struct ConditionSection {
  ConditionVariant variant = ConditionVariant::TimeAverage;
  WeightPreset weight = WeightPreset::Constant;
  double weight_scale = 1.0;
  double w0 = 0.0;
  bool operator==(const ConditionSection&) const = default;
};

struct ExponentSection {
  bool automatic = true;
  ExponentBook book;
  bool operator==(const ExponentSection& o) const {
    if (automatic != o.automatic) return false;
    if (automatic) return true;
    const auto& a = book;
    const auto& b = o.book;
    return a.beta == b.beta && a.alpha == b.alpha && a.alpha0 == b.alpha0 && a.gamma == b.gamma && a.xi == b.xi &&
           a.ell == b.ell && a.mu == b.mu && a.rho == b.rho;
  }
};

struct DataSection {
  DataSource source = DataSource::Manufactured;
  DataProfile profile = DataProfile::Cosine;
  double amplitude = 1e-2;
  int mode = 1;
  double offset = 0.0;
  std::string path;  // file source, relative to the config file
  bool operator==(const DataSection&) const = default;
};

struct ScanSection {
  double min = 1e-4;
  double max = 1.0;
  int count = 8;
  ScanDirection direction = ScanDirection::Raw;
  double direction_scale = 1.0;
  bool operator==(const ScanSection&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ModelSection model;
  GridSection grid;
  TimeSection time;
  ConditionSection condition;
  ExponentSection exponents;
  RecoveryConfig solver;
  DataSection data;
  ScanSection scan;
  int probe_trials = 5;
  std::string output = "out";
  std::filesystem::path base_dir;  // directory of the config file, not serialised

  bool operator==(const ExperimentConfig& o) const {
    const auto& s = solver;
    const auto& t = o.solver;
    return seed == o.seed && model == o.model && grid == o.grid && time == o.time && condition == o.condition &&
           exponents == o.exponents && data == o.data && scan == o.scan && probe_trials == o.probe_trials &&
           output == o.output && s.max_iters == t.max_iters && s.tol == t.tol && s.relaxation == t.relaxation &&
           s.ball_L == t.ball_L && s.sigma_floor == t.sigma_floor && s.method == t.method && s.scheme == t.scheme &&
           s.path_rho == t.path_rho;
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Typed reader over one parsed document; records consumed keys so that
// unknown keys can be reported afterwards.
class ConfigReader {
public:
  explicit ConfigReader(const boost::property_tree::ptree& tree) : tree_(tree) {}

  std::optional<std::string> raw(const std::string& key) {
    seen_.insert(key);
    const auto v = tree_.get_optional<std::string>(boost::property_tree::ptree::path_type(key, '.'));
    if (!v) return std::nullopt;
    std::string s = *v;
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }

  double number(const std::string& key, double fallback) {
    const auto v = raw(key);
    if (!v) return fallback;
    try {
      std::size_t pos = 0;
      const double d = std::stod(*v, &pos);
      if (pos != v->size() || !std::isfinite(d)) throw std::invalid_argument("trailing");
      return d;
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected a finite number, got '" + *v + "'");
    }
  }

  long long integer(const std::string& key, long long fallback) {
    const auto v = raw(key);
    if (!v) return fallback;
    try {
      std::size_t pos = 0;
      const long long i = std::stoll(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("trailing");
      return i;
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected an integer, got '" + *v + "'");
    }
  }

  std::string text(const std::string& key, const std::string& fallback) { return raw(key).value_or(fallback); }

  template <class E, class Parse>
  E choice(const std::string& key, E fallback, Parse parse) {
    const auto v = raw(key);
    if (!v) return fallback;
    try {
      return parse(*v);
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty()) throw ConfigError(section + ": top-level keys are not allowed; use a [section]");
      for (const auto& [key, value] : body) {
        const std::string path = section + "." + key;
        if (!seen_.count(path)) throw ConfigError(path + ": unknown key");
      }
    }
  }

private:
  const boost::property_tree::ptree& tree_;
  std::set<std::string> seen_;
};

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "chemotaxis") return ModelKind::Chemotaxis;
  if (s == "reaction_diffusion") return ModelKind::ReactionDiffusion;
  if (s == "linear_test") return ModelKind::LinearTest;
  throw ConfigError("unknown model kind '" + s + "'");
}
inline BoundaryKind parse_bc(const std::string& s) {
  if (s == "neumann") return BoundaryKind::Neumann;
  if (s == "dirichlet") return BoundaryKind::Dirichlet;
  throw ConfigError("unknown boundary condition '" + s + "'");
}
inline PropagatorMethod parse_method(const std::string& s) {
  if (s == "stepper") return PropagatorMethod::Stepper;
  if (s == "series") return PropagatorMethod::KernelSeries;
  throw ConfigError("unknown method '" + s + "' (stepper or series)");
}
inline StepScheme parse_scheme(const std::string& s) {
  if (s == "crank_nicolson") return StepScheme::CrankNicolson;
  if (s == "backward_euler") return StepScheme::BackwardEuler;
  throw ConfigError("unknown scheme '" + s + "'");
}
inline DataSource parse_source(const std::string& s) {
  if (s == "zero") return DataSource::Zero;
  if (s == "manufactured") return DataSource::Manufactured;
  if (s == "file") return DataSource::File;
  throw ConfigError("unknown data source '" + s + "'");
}
inline DataProfile parse_profile(const std::string& s) {
  if (s == "cosine") return DataProfile::Cosine;
  if (s == "random_smooth") return DataProfile::RandomSmooth;
  throw ConfigError("unknown data profile '" + s + "'");
}
inline ScanDirection parse_direction(const std::string& s) {
  if (s == "raw") return ScanDirection::Raw;
  if (s == "phi") return ScanDirection::Phi;
  throw ConfigError("unknown scan direction '" + s + "'");
}

} // namespace detail

/// Exponent book in force: the model's default book unless given explicitly.
inline ExponentBook resolve_exponents(const ExperimentConfig& c) {
  if (!c.exponents.automatic) return c.exponents.book;
  switch (c.model.kind) {
  case ModelKind::Chemotaxis: return chemotaxis_exponents(c.model.s_order);
  case ModelKind::ReactionDiffusion:
    return rd_exponents({c.model.p, 1, c.grid.bc == BoundaryKind::Neumann ? 1 : 0}, 2.0);
  case ModelKind::LinearTest: return chemotaxis_exponents(2.25);
  }
  return {};
}

inline std::shared_ptr<const BaseOperator> build_base(const ExperimentConfig& c) {
  return std::make_shared<const BaseOperator>(assemble_laplacian(build_grid(c.grid.n, c.grid.length, c.grid.bc)));
}

inline ModelPtr build_model(const ExperimentConfig& c) {
  const auto base = build_base(c);
  const ExponentBook book = resolve_exponents(c);
  switch (c.model.kind) {
  case ModelKind::Chemotaxis:
    return std::make_shared<ChemotaxisModel>(base, exponential_chemotaxis(c.model.delta), book, c.model.ball_radius,
                                             c.model.s_order);
  case ModelKind::ReactionDiffusion: {
    RdCoefficients rc = default_rd_coefficients(c.grid.n);
    const double gain = c.model.diffusion_gain;
    rc.diffusion = [gain](double, double s) { return 1.0 + gain * s * s; };
    rc.f = Polynomial{{0.0, 0.0, 0.0, c.model.reaction}};
    return std::make_shared<NonlocalRDModel>(base, rc, book, c.model.ball_radius, c.model.p);
  }
  case ModelKind::LinearTest:
    return std::make_shared<LinearModel>(base, c.model.diffusivity * base->matrix, book, c.model.ball_radius);
  }
  throw ConfigError("model.kind: unsupported");
}

inline TimeGrid build_time_grid(const ExperimentConfig& c) {
  if (!(c.time.T > 0.0)) throw ConfigError("time.T: must be positive");
  if (c.time.K < 1) throw ConfigError("time.K: must be >= 1");
  return TimeGrid(c.time.T, c.time.K);
}

inline AveragingCondition build_condition(const ExperimentConfig& c) {
  const TimeGrid g = build_time_grid(c);
  return AveragingCondition(c.condition.variant, g, sample_weight(c.condition.weight, g, c.condition.weight_scale),
                            c.condition.w0);
}

/// Schema and value checks that do not need a model run. Exponent-book
/// violations name the failed inequalities.
inline void validate_config(const ExperimentConfig& c) {
  if (c.grid.n < 2) throw ConfigError("grid.n: must be >= 2");
  if (!(c.grid.length > 0.0)) throw ConfigError("grid.length: must be positive");
  if (c.model.kind == ModelKind::Chemotaxis && c.grid.bc != BoundaryKind::Neumann)
    throw ConfigError("grid.bc: chemotaxis requires neumann");
  if (!(c.model.ball_radius > 0.0)) throw ConfigError("model.ball_radius: must be positive");
  if (!(c.condition.weight_scale != 0.0)) throw ConfigError("condition.weight_scale: must be nonzero");
  if (c.probe_trials < 1) throw ConfigError("probe.trials: must be >= 1");
  if (!(c.scan.min >= 0.0 && c.scan.max > c.scan.min)) throw ConfigError("scan: need 0 <= min < max");
  if (c.scan.count < 2) throw ConfigError("scan.count: must be >= 2");
  if (c.data.mode < 0) throw ConfigError("data.mode: must be >= 0");
  if (c.data.source == DataSource::File) {
    if (c.data.path.empty()) throw ConfigError("data.path: required for source = file");
    const auto p = c.base_dir / c.data.path;
    if (!std::filesystem::exists(p)) throw ConfigError("data.path: file not found: " + p.string());
  }
  (void)build_condition(c);
  const ModelPtr m = build_model(c);
  const ExponentReport rep = validate_exponents(*m);
  if (!rep.ok()) {
    std::string msg = "exponents: violated";
    for (const auto& f : rep.failures()) msg += " [" + f + "]";
    throw ConfigError(msg);
  }
  c.solver.validate(*m);
}

inline ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: malformed document: ") + e.message() + " (line " +
                      std::to_string(e.line()) + ")");
  }
  detail::ConfigReader r(tree);
  ExperimentConfig c;
  c.base_dir = base_dir;
  const long long seed = r.integer("run.seed", 0);
  if (seed < 0) throw ConfigError("run.seed: must be non-negative");
  c.seed = static_cast<std::uint64_t>(seed);
  c.output = r.text("run.output", c.output);

  if (!r.raw("model.kind")) throw ConfigError("model.kind: required");
  c.model.kind = r.choice("model.kind", c.model.kind, detail::parse_model_kind);
  c.model.ball_radius = r.number("model.ball_radius", c.model.ball_radius);
  c.model.delta = r.number("model.delta", c.model.delta);
  c.model.s_order = r.number("model.s_order", c.model.s_order);
  c.model.p = r.number("model.p", c.model.p);
  c.model.reaction = r.number("model.reaction", c.model.reaction);
  c.model.diffusion_gain = r.number("model.diffusion_gain", c.model.diffusion_gain);
  c.model.diffusivity = r.number("model.diffusivity", c.model.diffusivity);

  c.grid.n = static_cast<int>(r.integer("grid.n", c.grid.n));
  c.grid.length = r.number("grid.length", c.grid.length);
  c.grid.bc = r.choice("grid.bc", c.grid.bc, detail::parse_bc);

  c.time.T = r.number("time.T", c.time.T);
  c.time.K = static_cast<int>(r.integer("time.K", c.time.K));

  c.condition.variant = r.choice("condition.variant", c.condition.variant, parse_variant);
  c.condition.weight = r.choice("condition.weight", c.condition.weight, parse_weight_preset);
  c.condition.weight_scale = r.number("condition.weight_scale", c.condition.weight_scale);
  c.condition.w0 = r.number("condition.w0", c.condition.w0);

  const std::string preset = r.text("exponents.preset", "auto");
  if (preset == "auto") {
    c.exponents.automatic = true;
  } else if (preset == "explicit") {
    c.exponents.automatic = false;
    auto req = [&](const std::string& k) {
      if (!r.raw("exponents." + k)) throw ConfigError("exponents." + k + ": required when preset = explicit");
      return r.number("exponents." + k, 0.0);
    };
    ExponentBook& b = c.exponents.book;
    b.beta = req("beta");
    b.alpha = req("alpha");
    b.alpha0 = req("alpha0");
    b.gamma = req("gamma");
    b.xi = req("xi");
    b.ell = req("ell");
    b.mu = req("mu");
    b.rho = req("rho");
  } else {
    throw ConfigError("exponents.preset: expected auto or explicit, got '" + preset + "'");
  }

  RecoveryConfig& s = c.solver;
  s.max_iters = static_cast<int>(r.integer("solver.max_iters", s.max_iters));
  s.tol = r.number("solver.tol", s.tol);
  s.relaxation = r.number("solver.relaxation", s.relaxation);
  s.ball_L = r.number("solver.ball_L", s.ball_L);
  s.sigma_floor = r.number("solver.sigma_floor", s.sigma_floor);
  s.method = r.choice("solver.method", s.method, detail::parse_method);
  s.scheme = r.choice("solver.scheme", s.scheme, detail::parse_scheme);
  s.path_rho = r.number("solver.path_rho", s.path_rho);

  c.data.source = r.choice("data.source", c.data.source, detail::parse_source);
  c.data.profile = r.choice("data.profile", c.data.profile, detail::parse_profile);
  c.data.amplitude = r.number("data.amplitude", c.data.amplitude);
  c.data.mode = static_cast<int>(r.integer("data.mode", c.data.mode));
  c.data.offset = r.number("data.offset", c.data.offset);
  c.data.path = r.text("data.path", c.data.path);

  c.scan.min = r.number("scan.min", c.scan.min);
  c.scan.max = r.number("scan.max", c.scan.max);
  c.scan.count = static_cast<int>(r.integer("scan.count", c.scan.count));
  c.scan.direction = r.choice("scan.direction", c.scan.direction, detail::parse_direction);
  c.scan.direction_scale = r.number("scan.direction_scale", c.scan.direction_scale);

  c.probe_trials = static_cast<int>(r.integer("probe.trials", c.probe_trials));

  r.reject_unknown();
  validate_config(c);
  return c;
}

/// Full document with every key written out; doubles use 17 significant digits.
inline std::string serialize_config(const ExperimentConfig& c) {
  using detail::format_double;
  std::ostringstream o;
  o << "[run]\nseed = " << c.seed << "\noutput = " << c.output << "\n\n";
  o << "[model]\nkind = " << to_string(c.model.kind) << "\nball_radius = " << format_double(c.model.ball_radius)
    << "\ndelta = " << format_double(c.model.delta) << "\ns_order = " << format_double(c.model.s_order)
    << "\np = " << format_double(c.model.p) << "\nreaction = " << format_double(c.model.reaction)
    << "\ndiffusion_gain = " << format_double(c.model.diffusion_gain)
    << "\ndiffusivity = " << format_double(c.model.diffusivity) << "\n\n";
  o << "[grid]\nn = " << c.grid.n << "\nlength = " << format_double(c.grid.length) << "\nbc = " << to_string(c.grid.bc)
    << "\n\n";
  o << "[time]\nT = " << format_double(c.time.T) << "\nK = " << c.time.K << "\n\n";
  o << "[condition]\nvariant = " << to_string(c.condition.variant) << "\nweight = " << to_string(c.condition.weight)
    << "\nweight_scale = " << format_double(c.condition.weight_scale) << "\nw0 = " << format_double(c.condition.w0)
    << "\n\n";
  o << "[exponents]\npreset = " << (c.exponents.automatic ? "auto" : "explicit") << "\n";
  if (!c.exponents.automatic) {
    const ExponentBook& b = c.exponents.book;
    o << "beta = " << format_double(b.beta) << "\nalpha = " << format_double(b.alpha)
      << "\nalpha0 = " << format_double(b.alpha0) << "\ngamma = " << format_double(b.gamma)
      << "\nxi = " << format_double(b.xi) << "\nell = " << format_double(b.ell) << "\nmu = " << format_double(b.mu)
      << "\nrho = " << format_double(b.rho) << "\n";
  }
  o << "\n";
  const RecoveryConfig& s = c.solver;
  o << "[solver]\nmax_iters = " << s.max_iters << "\ntol = " << format_double(s.tol)
    << "\nrelaxation = " << format_double(s.relaxation) << "\nball_L = " << format_double(s.ball_L)
    << "\nsigma_floor = " << format_double(s.sigma_floor) << "\nmethod = " << to_string(s.method)
    << "\nscheme = " << to_string(s.scheme) << "\npath_rho = " << format_double(s.path_rho) << "\n\n";
  o << "[data]\nsource = " << to_string(c.data.source) << "\nprofile = " << to_string(c.data.profile)
    << "\namplitude = " << format_double(c.data.amplitude) << "\nmode = " << c.data.mode
    << "\noffset = " << format_double(c.data.offset) << "\n";
  if (!c.data.path.empty()) o << "path = " << c.data.path << "\n";
  o << "\n";
  o << "[scan]\nmin = " << format_double(c.scan.min) << "\nmax = " << format_double(c.scan.max)
    << "\ncount = " << c.scan.count << "\ndirection = " << to_string(c.scan.direction)
    << "\ndirection_scale = " << format_double(c.scan.direction_scale) << "\n\n";
  o << "[probe]\ntrials = " << c.probe_trials << "\n";
  return o.str();
}

} // namespace qlr

#endif // QLRECOVER_CONFIG_HPP
