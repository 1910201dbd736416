#ifndef QLRECOVER_MODELS_HPP
#define QLRECOVER_MODELS_HPP

// Quasilinear problems u' = A(u)u + f(u) on a 1-D grid, the exponent
// bookkeeping that goes with them, and sampled growth/Lipschitz probes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "qlrecover/spatial.hpp"

namespace qlr {

/// Exponents (beta, alpha, alpha0, gamma, xi, ell, mu, rho) of the abstract theory.
struct ExponentBook {
  double beta = 0.0;
  double alpha = 0.0;
  double alpha0 = 0.0;
  double gamma = 0.0;
  double xi = 0.0;
  double ell = 1.0;
  double mu = 0.0;
  double rho = 0.0;
};

struct CheckEntry {
  std::string name;
  bool pass = false;
};

struct ExponentReport {
  std::vector<CheckEntry> entries;

  bool ok() const {
    return std::all_of(entries.begin(), entries.end(), [](const CheckEntry& e) { return e.pass; });
  }
  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    for (const auto& e : entries)
      if (!e.pass) out.push_back(e.name);
    return out;
  }
  void add(std::string name, bool pass) { entries.push_back({std::move(name), pass}); }
};

/// Chemotaxis exponents are pinned by the Sobolev order s of the data.
struct ChemotaxisExponentContext {
  double s = 2.25;
};

/// Reaction-diffusion exponents depend on the Lebesgue exponent p, the space
/// dimension and the boundary type (delta = 0 Dirichlet, 1 Neumann).
struct RdExponentContext {
  double p = 4.0;
  int dim = 1;
  int delta = 1;
};

using ExponentContext = std::variant<std::monostate, ChemotaxisExponentContext, RdExponentContext>;

inline double positive_part(double x) { return x > 0.0 ? x : 0.0; }

/// The generic inequality chain shared by every model.
inline ExponentReport check_exponent_book(const ExponentBook& b) {
  ExponentReport r;
  r.add("0 <= beta", 0.0 <= b.beta);
  r.add("beta < alpha", b.beta < b.alpha);
  r.add("alpha < alpha0", b.alpha < b.alpha0);
  r.add("alpha0 <= 1", b.alpha0 <= 1.0);
  r.add("ell > 0", b.ell > 0.0);
  r.add("alpha0 < gamma", b.alpha0 < b.gamma);
  r.add("gamma <= 1", b.gamma <= 1.0);
  r.add("0 < xi", 0.0 < b.xi);
  r.add("xi < min{alpha + 1/(ell+1), 1}", b.xi < std::min(b.alpha + 1.0 / (b.ell + 1.0), 1.0));
  r.add("(xi - alpha)_+ < mu", positive_part(b.xi - b.alpha) < b.mu);
  r.add("mu < 1/(ell+1)", b.mu < 1.0 / (b.ell + 1.0));
  r.add("0 < 2 rho", 0.0 < 2.0 * b.rho);
  r.add("2 rho < min{2(1 - mu(ell+1)), alpha - beta}",
        2.0 * b.rho < std::min(2.0 * (1.0 - b.mu * (b.ell + 1.0)), b.alpha - b.beta));
  return r;
}

/// Admissible mu interval ((xi - alpha)_+, 1/(ell+1)).
inline std::pair<double, double> mu_range(const ExponentBook& b) {
  return {positive_part(b.xi - b.alpha), 1.0 / (b.ell + 1.0)};
}

/// Book for the chemotaxis system at data order s: beta = 0, alpha = s/2 - 1,
/// xi = s/4, ell = 1, alpha < alpha0 < gamma < 1/4, mu and rho at interior points.
inline ExponentBook chemotaxis_exponents(double s) {
  ExponentBook b;
  b.beta = 0.0;
  b.alpha = s / 2.0 - 1.0;
  b.xi = s / 4.0;
  b.ell = 1.0;
  const double gap = 0.25 - b.alpha;
  b.alpha0 = b.alpha + gap / 3.0;
  b.gamma = b.alpha + 2.0 * gap / 3.0;
  const auto [lo, hi] = mu_range(b);
  b.mu = 0.5 * (lo + hi);
  b.rho = 0.25 * std::min(2.0 * (1.0 - b.mu * (b.ell + 1.0)), b.alpha - b.beta);
  return b;
}

/// Book for the nonlocal reaction-diffusion problem following the
/// (ell+1) n < p chain; interior points of every admissible interval.
inline ExponentBook rd_exponents(const RdExponentContext& ctx, double ell) {
  ExponentBook b;
  b.beta = 0.0;
  b.ell = ell;
  const double np = ctx.dim / ctx.p;
  const double cap = std::min(np, 0.5 * (ctx.delta + 1.0 / ctx.p));
  b.alpha = cap / 3.0;
  b.alpha0 = 2.0 * cap / 3.0;
  b.xi = 0.5 * (np + std::min(b.alpha + 1.0 / (ell + 1.0), 1.0));
  b.gamma = 0.5 * (b.alpha0 + b.xi);
  const auto [lo, hi] = mu_range(b);
  b.mu = 0.5 * (lo + hi);
  b.rho = 0.25 * std::min(2.0 * (1.0 - b.mu * (ell + 1.0)), b.alpha - b.beta);
  return b;
}

inline ExponentReport check_exponents(const ExponentBook& b, const ExponentContext& ctx) {
  ExponentReport r = check_exponent_book(b);
  if (const auto* c = std::get_if<ChemotaxisExponentContext>(&ctx)) {
    r.add("s in (2, 5/2)", c->s > 2.0 && c->s < 2.5);
    r.add("beta = 0", b.beta == 0.0);
    r.add("alpha = s/2 - 1", std::abs(b.alpha - (c->s / 2.0 - 1.0)) <= 1e-12);
    r.add("xi = s/4", std::abs(b.xi - c->s / 4.0) <= 1e-12);
    r.add("alpha0 < gamma < 1/4", b.alpha0 < b.gamma && b.gamma < 0.25);
  } else if (const auto* d = std::get_if<RdExponentContext>(&ctx)) {
    const double np = d->dim / d->p;
    r.add("(ell+1) n < p < inf", (b.ell + 1.0) * d->dim < d->p && std::isfinite(d->p));
    r.add("0 < alpha < alpha0 < min{n/p, (delta + 1/p)/2}",
          0.0 < b.alpha && b.alpha < b.alpha0 && b.alpha0 < std::min(np, 0.5 * (d->delta + 1.0 / d->p)));
    r.add("n/p < xi < min{alpha + 1/(ell+1), 1}",
          np < b.xi && b.xi < std::min(b.alpha + 1.0 / (b.ell + 1.0), 1.0));
    r.add("0 = beta < alpha < alpha0 < gamma < xi",
          b.beta == 0.0 && b.alpha < b.alpha0 && b.alpha0 < b.gamma && b.gamma < b.xi);
  }
  return r;
}

/// u' = A(u) u + f(u). Implementations are immutable; assemble_A and
/// evaluate_f are pure.
class QuasilinearModel {
public:
  QuasilinearModel(std::shared_ptr<const BaseOperator> base, ExponentBook book, ExponentContext ctx,
                   double ball_radius)
      : scale_(std::move(base)), book_(book), ctx_(ctx), ball_radius_(ball_radius) {
    if (!(ball_radius > 0.0)) throw ConfigError("model: ball radius must be positive");
  }
  virtual ~QuasilinearModel() = default;

  virtual Matrix assemble_A(const Field& u) const = 0;
  virtual Field evaluate_f(const Field& u) const = 0;
  virtual std::string kind() const = 0;

  const BaseOperator& base() const { return *scale_.base; }
  std::shared_ptr<const BaseOperator> base_ptr() const { return scale_.base; }
  const SobolevScale& scale() const { return scale_; }
  const Grid1D& grid() const { return scale_.base->grid; }
  int size() const { return scale_.base->size(); }
  const ExponentBook& exponents() const { return book_; }
  const ExponentContext& exponent_context() const { return ctx_; }
  double ball_radius() const { return ball_radius_; }

  double beta_norm(const Field& u) const { return sobolev_norm(scale_, u, 2.0 * book_.beta); }
  bool in_ball(const Field& u) const { return beta_norm(u) <= ball_radius_; }

  /// The operator A(0) the model declares as its linearisation.
  Matrix linearization() const { return assemble_A(Field::Zero(size())); }

protected:
  void require_size(const Field& u, const char* where) const {
    if (u.size() != size()) throw ContractViolation(std::string(where) + ": field length mismatch");
  }

private:
  SobolevScale scale_;
  ExponentBook book_;
  ExponentContext ctx_;
  double ball_radius_;
};

using ModelPtr = std::shared_ptr<const QuasilinearModel>;

inline ExponentReport validate_exponents(const QuasilinearModel& model) {
  return check_exponents(model.exponents(), model.exponent_context());
}

/// A function together with its derivative.
struct ScalarFunction {
  std::function<double(double)> value;
  std::function<double(double)> derivative;
};

struct ChemotaxisCoefficients {
  ScalarFunction a;   // diffusivity a(v)
  ScalarFunction chi; // sensitivity chi(v)
  double delta = 1.0;
};

/// a(s) = e^{-delta s}, chi = -a' = delta e^{-delta s}.
inline ChemotaxisCoefficients exponential_chemotaxis(double delta) {
  if (!(delta > 0.0)) throw ConfigError("chemotaxis: delta must be positive");
  ChemotaxisCoefficients c;
  c.delta = delta;
  c.a = {[delta](double s) { return std::exp(-delta * s); },
         [delta](double s) { return -delta * std::exp(-delta * s); }};
  c.chi = {[delta](double s) { return delta * std::exp(-delta * s); },
           [delta](double s) { return -delta * delta * std::exp(-delta * s); }};
  return c;
}

/// Local-sensing chemotaxis u_t = div(a(v) grad u - chi(v) u grad v),
/// v = (1 - Delta_N)^{-1} u, in the expanded quasilinear form
///   A(u)w = a(v) Delta w + (a - chi)'(v) v_x w_x - chi(v) v w,
///   f(u)  = -chi(v) u^2.
class ChemotaxisModel final : public QuasilinearModel {
public:
  ChemotaxisModel(std::shared_ptr<const BaseOperator> base, ChemotaxisCoefficients coeffs, ExponentBook book,
                  double ball_radius, double s_order = 2.25)
      : QuasilinearModel(base, book, ChemotaxisExponentContext{s_order}, ball_radius), coeffs_(std::move(coeffs)),
        d1_(first_difference_matrix(base->grid)) {
    if (base->grid.bc != BoundaryKind::Neumann) throw ConfigError("chemotaxis: requires a Neumann base operator");
    if (!(coeffs_.a.value(0.0) > 0.0)) throw ConfigError("chemotaxis: a(0) must be positive");
  }

  std::string kind() const override { return "chemotaxis"; }
  const ChemotaxisCoefficients& coefficients() const { return coeffs_; }

  Field signal(const Field& u) const {
    require_size(u, "chemotaxis_signal");
    return helmholtz_solve(base(), u);
  }

  Matrix assemble_A(const Field& u) const override {
    require_size(u, "chemotaxis_A");
    const double nb = beta_norm(u);
    if (!(nb <= ball_radius()))
      throw ModelError("chemotaxis_A: state left the ball (norm " + std::to_string(nb) + " > " +
                       std::to_string(ball_radius()) + ")");
    const Field v = signal(u);
    const Field dv = d1_ * v;
    const int n = size();
    Field av(n), drift(n), react(n);
    for (int i = 0; i < n; ++i) {
      av(i) = coeffs_.a.value(v(i));
      drift(i) = (coeffs_.a.derivative(v(i)) - coeffs_.chi.derivative(v(i))) * dv(i);
      react(i) = coeffs_.chi.value(v(i)) * v(i);
    }
    Matrix A = av.asDiagonal() * base().matrix;
    A.noalias() += drift.asDiagonal() * d1_;
    A.diagonal() -= react;
    return A;
  }

  Field evaluate_f(const Field& u) const override {
    require_size(u, "chemotaxis_f");
    const Field v = signal(u);
    Field f(size());
    for (int i = 0; i < size(); ++i) f(i) = -coeffs_.chi.value(v(i)) * u(i) * u(i);
    return f;
  }

private:
  ChemotaxisCoefficients coeffs_;
  Matrix d1_;
};

/// Polynomial sum_k c_k r^k.
struct Polynomial {
  std::vector<double> coeffs;

  double operator()(double r) const {
    double acc = 0.0;
    for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * r + *it;
    return acc;
  }
  double derivative(double r) const {
    double acc = 0.0;
    for (std::size_t k = coeffs.size(); k-- > 1;) acc = acc * r + static_cast<double>(k) * coeffs[k];
    return acc;
  }
  int degree() const {
    for (std::size_t k = coeffs.size(); k-- > 0;)
      if (coeffs[k] != 0.0) return static_cast<int>(k);
    return 0;
  }
};

using SpaceStateFunction = std::function<double(double x, double s)>;

struct RdCoefficients {
  SpaceStateFunction diffusion;                 // a(x, s), elliptic
  SpaceStateFunction drift;                     // a_1(x, s); empty means none
  SpaceStateFunction reaction;                  // a_0(x, s); empty means none
  Field diffusion_weight;                       // m(x) of l(u) = int m u
  Field drift_weight;                           // empty: reuse diffusion_weight
  Field reaction_weight;                        // empty: reuse diffusion_weight
  Polynomial f{{0.0, 0.0, 0.0, -1.0}};          // f(r) = -r^3 by default
  double ellipticity_floor = 0.5;
};

/// Defaults: a(x,s) = 1 + s^2, l(u) = int u dx, f(r) = -r^3, no drift or reaction.
inline RdCoefficients default_rd_coefficients(int n) {
  RdCoefficients c;
  c.diffusion = [](double, double s) { return 1.0 + s * s; };
  c.diffusion_weight = Field::Ones(n);
  return c;
}

/// u_t = d/dx(a(x, l(u)) u_x) + a_1(x, l_1(u)) u_x + a_0(x, l_0(u)) u + f(u)
/// with Dirichlet or Neumann boundary data and linear integral functionals.
class NonlocalRDModel final : public QuasilinearModel {
public:
  NonlocalRDModel(std::shared_ptr<const BaseOperator> base, RdCoefficients coeffs, ExponentBook book,
                  double ball_radius, double p = 4.0)
      : QuasilinearModel(base, book,
                         RdExponentContext{p, 1, base->grid.bc == BoundaryKind::Neumann ? 1 : 0}, ball_radius),
        coeffs_(std::move(coeffs)), d1_(first_difference_matrix(base->grid)) {
    const int n = base->size();
    if (!coeffs_.diffusion) throw ConfigError("reaction_diffusion: diffusion coefficient required");
    if (coeffs_.diffusion_weight.size() != n) throw ConfigError("reaction_diffusion: functional weight length");
    if (coeffs_.drift_weight.size() == 0) coeffs_.drift_weight = coeffs_.diffusion_weight;
    if (coeffs_.reaction_weight.size() == 0) coeffs_.reaction_weight = coeffs_.diffusion_weight;
    if (coeffs_.drift_weight.size() != n || coeffs_.reaction_weight.size() != n)
      throw ConfigError("reaction_diffusion: functional weight length");
    if (coeffs_.f(0.0) != 0.0 || coeffs_.f.derivative(0.0) != 0.0)
      throw ConfigError("reaction_diffusion: need f(0) = f'(0) = 0");
    if (!(coeffs_.ellipticity_floor > 0.0)) throw ConfigError("reaction_diffusion: ellipticity floor must be positive");
    const Field faces = face_coefficients(Field::Zero(n));
    if (faces.minCoeff() < coeffs_.ellipticity_floor)
      throw ConfigError("reaction_diffusion: a(x, l(0)) below the ellipticity floor");
  }

  std::string kind() const override { return "reaction_diffusion"; }
  const RdCoefficients& coefficients() const { return coeffs_; }

  /// Growth exponent of the polynomial nonlinearity (degree - 1).
  double growth_exponent() const { return std::max(1, coeffs_.f.degree() - 1); }

  double functional(const Field& weight, const Field& u) const { return grid().spacing * weight.dot(u); }

  /// a(x_face, l(u)) on the faces carrying flux: n+1 faces for Dirichlet, n-1
  /// interior faces for Neumann.
  Field face_coefficients(const Field& u) const {
    const Grid1D& g = grid();
    const double s = functional(coeffs_.diffusion_weight, u);
    const bool dirichlet = g.bc == BoundaryKind::Dirichlet;
    const int count = dirichlet ? g.n + 1 : g.n - 1;
    Field a(count);
    for (int f = 0; f < count; ++f) {
      const double x = dirichlet ? (f + 0.5) * g.spacing : (f + 1.0) * g.spacing;
      a(f) = coeffs_.diffusion(x, s);
    }
    return a;
  }

  Matrix assemble_A(const Field& u) const override {
    require_size(u, "rd_A");
    const Grid1D& g = grid();
    const int n = g.n;
    const Field a = face_coefficients(u);
    const double amin = a.minCoeff();
    if (!(amin >= coeffs_.ellipticity_floor))
      throw ModelError("rd_A: ellipticity violated (min face coefficient " + std::to_string(amin) + ")");
    const double inv_h2 = 1.0 / (g.spacing * g.spacing);
    Matrix A = Matrix::Zero(n, n);
    const bool dirichlet = g.bc == BoundaryKind::Dirichlet;
    for (int i = 0; i < n; ++i) {
      // left face of node i and right face of node i
      const double left = dirichlet ? a(i) : (i > 0 ? a(i - 1) : 0.0);
      const double right = dirichlet ? a(i + 1) : (i + 1 < n ? a(i) : 0.0);
      A(i, i) = -(left + right) * inv_h2;
      if (i > 0) A(i, i - 1) = left * inv_h2;
      if (i + 1 < n) A(i, i + 1) = right * inv_h2;
    }
    if (coeffs_.drift) {
      const double s1 = functional(coeffs_.drift_weight, u);
      Field b(n);
      for (int i = 0; i < n; ++i) b(i) = coeffs_.drift(g.node(i), s1);
      A.noalias() += b.asDiagonal() * d1_;
    }
    if (coeffs_.reaction) {
      const double s0 = functional(coeffs_.reaction_weight, u);
      for (int i = 0; i < n; ++i) A(i, i) += coeffs_.reaction(g.node(i), s0);
    }
    return A;
  }

  Field evaluate_f(const Field& u) const override {
    require_size(u, "rd_f");
    return u.unaryExpr([this](double r) { return coeffs_.f(r); });
  }

private:
  RdCoefficients coeffs_;
  Matrix d1_;
};

/// Constant generator, no nonlinearity: the linear reference problem.
class LinearModel final : public QuasilinearModel {
public:
  LinearModel(std::shared_ptr<const BaseOperator> base, Matrix generator, ExponentBook book, double ball_radius)
      : QuasilinearModel(base, book, std::monostate{}, ball_radius), generator_(std::move(generator)) {
    if (generator_.rows() != base->size() || generator_.cols() != base->size())
      throw ConfigError("linear_test: generator dimension mismatch");
  }

  std::string kind() const override { return "linear_test"; }
  Matrix assemble_A(const Field& u) const override {
    require_size(u, "linear_A");
    return generator_;
  }
  Field evaluate_f(const Field& u) const override {
    require_size(u, "linear_f");
    return Field::Zero(size());
  }

private:
  Matrix generator_;
};

/// The model seen from an equilibrium v*: A*(w) = A(w + v*),
/// f*(w) = A(w + v*) v* + f(w + v*).
class ShiftedModel final : public QuasilinearModel {
public:
  ShiftedModel(ModelPtr inner, Field v_star)
      : QuasilinearModel(inner->base_ptr(), inner->exponents(), inner->exponent_context(), inner->ball_radius()),
        inner_(std::move(inner)), v_star_(std::move(v_star)) {}

  std::string kind() const override { return inner_->kind(); }
  const Field& equilibrium() const { return v_star_; }

  Matrix assemble_A(const Field& w) const override { return inner_->assemble_A(w + v_star_); }
  Field evaluate_f(const Field& w) const override {
    const Field u = w + v_star_;
    return inner_->assemble_A(u) * v_star_ + inner_->evaluate_f(u);
  }

private:
  ModelPtr inner_;
  Field v_star_;
};

/// Discrete L2 norm of A(v*) v* + f(v*).
inline double equilibrium_residual(const QuasilinearModel& model, const Field& v_star) {
  return l2_norm(model.grid(), model.assemble_A(v_star) * v_star + model.evaluate_f(v_star));
}

inline ModelPtr equilibrium_shift(const ModelPtr& model, const Field& v_star, double tol = 1e-10) {
  if (v_star.size() != model->size()) throw ContractViolation("equilibrium_shift: field length mismatch");
  const double r = equilibrium_residual(*model, v_star);
  if (!(r <= tol))
    throw ModelError("equilibrium_shift: v* is not an equilibrium (residual " + std::to_string(r) + ")");
  return std::make_shared<ShiftedModel>(model, v_star);
}

/// Random smooth field: eigen-coefficients N(0,1)/(1+k)^2, scaled to the
/// given beta-norm.
inline Field random_smooth_field(const QuasilinearModel& model, std::mt19937_64& rng, double beta_norm) {
  std::normal_distribution<double> g(0.0, 1.0);
  const int n = model.size();
  Field c(n);
  for (int k = 0; k < n; ++k) c(k) = g(rng) / ((1.0 + k) * (1.0 + k));
  Field u = model.base().eigenvectors * c;
  const double nb = model.beta_norm(u);
  return nb > 0.0 ? Field(u * (beta_norm / nb)) : u;
}

/// Empirical constant of
///   ||f(v)-f(w)||_gamma <= c ( [|v|_xi^l + |w|_xi^l] |v-w|_xi + [|v|_xi^{l+1} + |w|_xi^{l+1}] |v-w|_beta )
/// over random pairs in the beta-ball of the given radius.
inline double growth_estimate_probe(const QuasilinearModel& model, int sample_count, double radius,
                                    std::uint64_t seed = 0) {
  if (!(radius > 0.0) || radius > model.ball_radius())
    throw ContractViolation("growth_estimate_probe: radius must lie in (0, ball radius]");
  const ExponentBook& b = model.exponents();
  const SobolevScale& sc = model.scale();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> frac(0.05, 1.0);
  double best = 0.0;
  for (int s = 0; s < sample_count; ++s) {
    const Field v = random_smooth_field(model, rng, radius * frac(rng));
    const Field w = random_smooth_field(model, rng, radius * frac(rng));
    const double lhs = sobolev_norm(sc, model.evaluate_f(v) - model.evaluate_f(w), 2.0 * b.gamma);
    const double vx = sobolev_norm(sc, v, 2.0 * b.xi);
    const double wx = sobolev_norm(sc, w, 2.0 * b.xi);
    const double rhs = (std::pow(vx, b.ell) + std::pow(wx, b.ell)) * sobolev_norm(sc, v - w, 2.0 * b.xi) +
                       (std::pow(vx, b.ell + 1.0) + std::pow(wx, b.ell + 1.0)) *
                           sobolev_norm(sc, v - w, 2.0 * b.beta);
    if (rhs > 0.0) best = std::max(best, lhs / rhs);
  }
  return best;
}

/// Largest sampled ||A(u) - A(w)||_2 / ||u - w||_L2 over random pairs in the ball.
inline double operator_lipschitz_probe(const QuasilinearModel& model, int sample_count, double radius,
                                       std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> frac(0.05, 1.0);
  double best = 0.0;
  for (int s = 0; s < sample_count; ++s) {
    const Field v = random_smooth_field(model, rng, radius * frac(rng));
    const Field w = random_smooth_field(model, rng, radius * frac(rng));
    const double d = l2_norm(model.grid(), v - w);
    if (d > 0.0) best = std::max(best, operator_norm(model.assemble_A(v) - model.assemble_A(w)) / d);
  }
  return best;
}

} // namespace qlr

#endif // QLRECOVER_MODELS_HPP
