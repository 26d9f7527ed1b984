#include <cmath>
#include <complex>
#include <memory>
#include <numbers>

#include "da/sde_models.hpp"
#include "doctest.h"

using namespace da;

namespace {

std::shared_ptr<const Drift> lorenz() { return std::make_shared<LorenzDrift>(Lorenz63Params{}); }

std::shared_ptr<const Drift> scalar_linear(double a) {
  return std::make_shared<LinearDrift>(DenseMatrix(1, 1, {a}));
}

// Central-difference Jacobian of a vector map.
template <class F>
DenseMatrix fd_jacobian(F f, const Vector& x, double h = 1e-6) {
  const Vector f0 = f(x);
  DenseMatrix j(f0.size(), x.size());
  for (std::size_t c = 0; c < x.size(); ++c) {
    Vector xp = x, xm = x;
    xp[c] += h;
    xm[c] -= h;
    const Vector fp = f(xp), fm = f(xm);
    for (std::size_t r = 0; r < f0.size(); ++r) j(r, c) = (fp[r] - fm[r]) / (2 * h);
  }
  return j;
}

double max_rel_diff(const DenseMatrix& a, const DenseMatrix& b) {
  double d = 0.0;
  const double scale = std::max(1.0, b.max_abs());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) d = std::max(d, std::abs(a(i, j) - b(i, j)));
  return d / scale;
}

Vector random_vector(RngStream& rng, std::size_t n, double scale = 1.0) {
  Vector v = standard_normal_vector(rng, n);
  for (double& x : v) x *= scale;
  return v;
}

}  // namespace

TEST_SUITE("sde_models") {

TEST_CASE("Lorenz drift at equilibria and a hand-evaluated point") {
  const Lorenz63Params p;
  for (double v : lorenz_drift(Vector{0, 0, 0}, p)) CHECK(v == 0.0);
  const double s = std::sqrt(72.0);
  for (double v : lorenz_drift(Vector{s, s, 27}, p)) CHECK(std::abs(v) < 1e-12);
  const Vector f = lorenz_drift(Vector{1, 2, 3}, p);
  CHECK(f[0] == doctest::Approx(10.0));
  CHECK(f[1] == doctest::Approx(23.0));
  CHECK(f[2] == doctest::Approx(2.0 - 8.0));
}

TEST_CASE("Lorenz Jacobian and curvature against finite differences") {
  const LorenzDrift d{Lorenz63Params{}};
  RngStream rng(1, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const Vector x = random_vector(rng, 3, 5.0);
    const Vector v = random_vector(rng, 3);
    CHECK(max_rel_diff(d.jacobian(x), fd_jacobian([&](const Vector& y) { return d.value(y); }, x)) < 1e-8);
    // Σ v_a ∇²f_a = Jacobian of (J(x)ᵀ v)
    const DenseMatrix c = fd_jacobian([&](const Vector& y) { return d.jacobian(y).multiply_transposed(v); }, x);
    CHECK(max_rel_diff(d.curvature(x, v), c) < 1e-8);
  }
}

TEST_CASE("KP step without noise or drift is the identity") {
  const LinearDrift zero(DenseMatrix(2, 2));
  const Vector x{1.5, -2.0};
  const KpStep s = kp_step(zero, x, 0.0, 0.1, Vector{0.3, 0.1}, Vector{-1.0, 2.0});
  CHECK(s.predictor == x);
  CHECK(s.next == x);
}

TEST_CASE("KP step formula with given normals") {
  const LinearDrift d(DenseMatrix(1, 1, {-2.0}));
  const double g = 0.7, delta = 0.1, x = 1.3, n1 = 0.4, n2 = -1.1;
  const KpStep s = kp_step(d, Vector{x}, g, delta, Vector{n1}, Vector{n2});
  const double xs = x + delta * (-2 * x) + g * std::sqrt(delta) * n1;
  const double xn = x + 0.5 * delta * (-2 * x - 2 * xs) + g * std::sqrt(delta) * n2;
  CHECK(s.predictor[0] == doctest::Approx(xs).epsilon(1e-15));
  CHECK(s.next[0] == doctest::Approx(xn).epsilon(1e-15));
}

TEST_CASE("KP without noise is second order on Lorenz") {
  const LorenzDrift d{Lorenz63Params{}};
  const Vector x0{-5.91652, -5.52332, 24.5723};
  auto run_kp = [&](double delta, int steps) {
    Vector x = x0;
    const Vector zeros(3, 0.0);
    for (int n = 0; n < steps; ++n) x = kp_step(d, x, 0.0, delta, zeros, zeros).next;
    return x;
  };
  Vector ref = x0;
  const double fine = std::ldexp(1.0, -12);
  for (int n = 0; n < 4096; ++n) ref = rk4_additive_step(d, ref, 0.0, fine, Vector(3, 0.0));
  const double e1 = norm(subtract(run_kp(1.0 / 64, 64), ref));
  const double e2 = norm(subtract(run_kp(1.0 / 128, 128), ref));
  const double ratio = e1 / e2;
  CHECK(ratio > 3.5);
  CHECK(ratio < 4.5);
}

TEST_CASE("RK4 step on linear and equilibrium problems") {
  const auto grow = scalar_linear(1.0);
  const Vector x = rk4_additive_step(*grow, Vector{1.0}, 0.0, 0.1, Vector{0.0});
  CHECK(std::abs(x[0] - std::exp(0.1)) < 1e-6);
  const LorenzDrift d{Lorenz63Params{}};
  const double s = std::sqrt(72.0);
  const Vector eq = rk4_additive_step(d, Vector{s, s, 27}, 0.0, 0.01, Vector(3, 0.0));
  CHECK(std::abs(eq[0] - s) < 1e-12);
  CHECK(std::abs(eq[2] - 27) < 1e-12);
}

TEST_CASE("Euler-Maruyama step") {
  const auto zero = scalar_linear(0.0);
  CHECK(euler_maruyama_step(*zero, Vector{2.5}, Vector{0.0}, 0.1, Vector{1.0})[0] == 2.5);
  const auto decay = scalar_linear(-1.0);
  CHECK(euler_maruyama_step(*decay, Vector{1.0}, Vector{0.0}, 0.1, Vector{0.3})[0] ==
        doctest::Approx(0.9));
  CHECK(euler_maruyama_step(*decay, Vector{1.0}, Vector{0.5}, 0.04, Vector{2.0})[0] ==
        doctest::Approx(0.96 + 0.5 * 0.2 * 2.0));
}

TEST_CASE("Euler-Maruyama drifts away from the reference sooner than KP") {
  // Deterministic Lorenz: compare both δ = 0.01 schemes against a fine RK4 run.
  const LorenzDrift d{Lorenz63Params{}};
  const Vector x0{-5.91652, -5.52332, 24.5723};
  const Vector amp{0.0, 0.0, 0.0}, zeros(3, 0.0);
  Vector ref = x0, em = x0, kp = x0;
  double em_time = -1.0, kp_time = -1.0;
  const int per = 64;  // fine steps per coarse step
  for (int n = 1; n <= 2000; ++n) {
    for (int i = 0; i < per; ++i) ref = rk4_additive_step(d, ref, 0.0, 0.01 / per, zeros);
    em = euler_maruyama_step(d, em, amp, 0.01, zeros);
    kp = kp_step(d, kp, 0.0, 0.01, zeros, zeros).next;
    if (em_time < 0 && norm(subtract(em, ref)) > 5.0) em_time = 0.01 * n;
    if (kp_time < 0 && norm(subtract(kp, ref)) > 5.0) kp_time = 0.01 * n;
  }
  REQUIRE(em_time > 0);
  CHECK(em_time < 6.0);
  CHECK((kp_time < 0 || kp_time > em_time));
}

TEST_CASE("exponential Euler is exact for linear problems and has the right limits") {
  const ExponentialEuler decay(Vector{-1.0}, Vector{1.0}, 0.0, 0.5);
  CHECK(decay.step(Vector{1.0}, Vector{0.0}, Vector{0.7})[0] == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
  for (double delta : {0.01, 0.3, 2.0}) {
    const ExponentialEuler lin(Vector{-3.0, 0.5}, Vector{1.0, 1.0}, 0.0, delta);
    const Vector u = lin.step(Vector{1.0, 2.0}, Vector{0.0, 0.0}, Vector{0.0, 0.0});
    CHECK(u[0] == doctest::Approx(std::exp(-3.0 * delta)));
    CHECK(u[1] == doctest::Approx(2.0 * std::exp(0.5 * delta)));
  }
  const ExponentialEuler neutral(Vector{0.0}, Vector{1.0}, 1.0, 0.25);
  CHECK(neutral.noise_std()[0] == doctest::Approx(0.5));
  CHECK(neutral.forcing_weight()[0] == doctest::Approx(0.25));
  // just above the series threshold both branches agree
  const ExponentialEuler tiny(Vector{2e-8}, Vector{1.0}, 1.0, 1.0);
  const ExponentialEuler tinier(Vector{5e-9}, Vector{1.0}, 1.0, 1.0);
  CHECK(tiny.forcing_weight()[0] == doctest::Approx(tinier.forcing_weight()[0]).epsilon(1e-7));
  CHECK(tiny.noise_std()[0] == doctest::Approx(tinier.noise_std()[0]).epsilon(1e-7));
  // general entry: σ² = q g² (e^{2λδ} − 1)/(2λ)
  const ExponentialEuler general(Vector{-2.0}, Vector{0.3}, 1.5, 0.1);
  CHECK(general.noise_std()[0] ==
        doctest::Approx(1.5 * std::sqrt(0.3 * std::expm1(-0.4) / -4.0)).epsilon(1e-14));
}

TEST_CASE("SKS eigenvalues: fifteen unstable wavenumbers for the default domain") {
  SksParams p;
  p.modes = 128;
  CHECK(sks_unstable_mode_count(p) == 15);
  const Vector w = p.wavenumbers();
  const Vector l = p.eigenvalues();
  CHECK(w[0] == doctest::Approx(2 * std::numbers::pi / p.period));
  CHECK(l[3] == doctest::Approx(w[3] * w[3] - p.viscosity * std::pow(w[3], 4)));
  const Vector q = p.noise_spectrum();
  CHECK(q[2] == doctest::Approx(std::exp(-w[2])));
  p.spectrum = NoiseSpectrum::white;
  CHECK(p.noise_spectrum()[5] == 1.0);
}

TEST_CASE("SKS nonlinear term: zero and single mode") {
  SksParams p;
  p.modes = 16;
  const Vector zero(16, 0.0);
  for (double v : sks_nonlinear(zero, p)) CHECK(v == 0.0);
  Vector u(16, 0.0);
  const double a = 0.8;
  u[0] = a;
  const Vector n = sks_nonlinear(u, p);
  const Vector w = p.wavenumbers();
  for (std::size_t k = 0; k < 16; ++k) {
    if (k == 1) {
      CHECK(n[k] == doctest::Approx(-0.5 * w[1] * a * a));
    } else {
      CHECK(n[k] == 0.0);
    }
  }
}

TEST_CASE("SKS nonlinear term against a pseudospectral oracle") {
  // State coefficients U_k carry the field v(x) = 2 Σ U_k sin(ω_k x); the
  // convolution equals the sine coefficients of −v v_x, halved.
  SksParams p;
  p.modes = 32;
  const std::size_t m = p.modes;
  const Vector w = p.wavenumbers();
  RngStream rng(9, 3);
  const Vector u = random_vector(rng, m, 0.3);
  const std::size_t grid = 8 * m;
  Vector rhs(grid);
  for (std::size_t j = 0; j < grid; ++j) {
    const double x = p.period * double(j) / double(grid);
    double v = 0, vx = 0;
    for (std::size_t k = 0; k < m; ++k) {
      v += 2 * u[k] * std::sin(w[k] * x);
      vx += 2 * u[k] * w[k] * std::cos(w[k] * x);
    }
    rhs[j] = -v * vx;
  }
  const Vector n = sks_nonlinear(u, p);
  for (std::size_t k = 0; k < m; ++k) {
    double coef = 0;
    for (std::size_t j = 0; j < grid; ++j) {
      const double x = p.period * double(j) / double(grid);
      coef += rhs[j] * std::sin(w[k] * x);
    }
    coef *= 2.0 / double(grid);
    CHECK(n[k] == doctest::Approx(0.5 * coef).epsilon(1e-10).scale(1.0));
  }
}

TEST_CASE("SKS nonlinear Jacobian and curvature against finite differences") {
  SksParams p;
  p.modes = 12;
  const Vector w = p.wavenumbers();
  RngStream rng(4, 4);
  const Vector u = random_vector(rng, p.modes);
  const Vector v = random_vector(rng, p.modes);
  const DenseMatrix jac = sks_nonlinear_jacobian(u, w);
  CHECK(max_rel_diff(jac, fd_jacobian([&](const Vector& y) { return sks_nonlinear(y, w); }, u)) < 1e-8);
  const DenseMatrix curv = sks_nonlinear_curvature(v, w);
  const DenseMatrix ref =
      fd_jacobian([&](const Vector& y) { return sks_nonlinear_jacobian(y, w).multiply_transposed(v); }, u);
  CHECK(max_rel_diff(curv, ref) < 1e-8);
  CHECK(curv.is_symmetric());
}

TEST_CASE("SKS physical values") {
  SksParams p;
  p.modes = 8;
  const Vector zero(8, 0.0);
  for (double v : sks_physical_values(zero, Vector{0.1, 3.0}, p)) CHECK(v == 0.0);
  Vector u(8, 0.0);
  u[0] = 1.0;
  CHECK(sks_physical_values(u, Vector{p.period / 4}, p)[0] == doctest::Approx(-2.0));

  RngStream rng(6, 1);
  const Vector r = random_vector(rng, 8);
  const Vector locations = sks_equidistant_locations(4, p);
  CHECK(locations[1] == doctest::Approx(p.period / 4));
  const Vector values = sks_physical_values(r, locations, p);
  const Vector w = p.wavenumbers();
  for (std::size_t j = 0; j < locations.size(); ++j) {
    // Σ_{k=±1..±m} Ũ_k e^{iω_k x} with Ũ_k = iU_k, Ũ_{−k} = −iU_k
    std::complex<double> s = 0;
    for (std::size_t k = 0; k < 8; ++k) {
      const std::complex<double> uk(0.0, r[k]);
      s += uk * std::exp(std::complex<double>(0.0, w[k] * locations[j]));
      s += -uk * std::exp(std::complex<double>(0.0, -w[k] * locations[j]));
    }
    CHECK(std::abs(s.imag()) < 1e-12);
    CHECK(std::abs(values[j] - s.real()) < 1e-12);
  }
  const DenseMatrix e = sks_physical_matrix(locations, p);
  const Vector ev = e.multiply(r);
  for (std::size_t j = 0; j < locations.size(); ++j) CHECK(ev[j] == doctest::Approx(values[j]));
}

TEST_CASE("SKS model transition derivatives against finite differences") {
  SksParams p;
  p.modes = 10;
  const SksModel model(p, 0.01);
  RngStream rng(2, 2);
  const Vector u = random_vector(rng, p.modes, 0.5);
  const Vector v = random_vector(rng, p.modes);
  const DenseMatrix jac = model.transition_jacobian(u);
  CHECK(max_rel_diff(jac, fd_jacobian([&](const Vector& y) { return model.transition_mean(y); }, u)) < 1e-8);
  const DenseMatrix ref = fd_jacobian(
      [&](const Vector& y) { return model.transition_jacobian(y).multiply_transposed(v); }, u);
  CHECK(max_rel_diff(model.transition_curvature(u, v), ref) < 1e-8);
  const Vector var = model.transition_variance();
  for (std::size_t k = 0; k < p.modes; ++k) {
    CHECK(var[k] == doctest::Approx(model.scheme().noise_std()[k] * model.scheme().noise_std()[k]));
  }
}

TEST_CASE("Euler-Maruyama transition structure matches the step") {
  const DriftModel model(lorenz(), Vector{std::sqrt(2.0)}, 0.01, Integrator::euler_maruyama,
                         Vector{1, 2, 3});
  RngStream rng(3, 3);
  const Vector x = random_vector(rng, 3, 4.0);
  const Vector v = random_vector(rng, 3);
  CHECK(max_rel_diff(model.transition_jacobian(x),
                     fd_jacobian([&](const Vector& y) { return model.transition_mean(y); }, x)) < 1e-8);
  const DenseMatrix ref = fd_jacobian(
      [&](const Vector& y) { return model.transition_jacobian(y).multiply_transposed(v); }, x);
  CHECK(max_rel_diff(model.transition_curvature(x, v), ref) < 1e-8);
  CHECK(model.transition_variance()[1] == doctest::Approx(2.0 * 0.01));
  const Vector step = model.step(x, Vector{1, 0, 0}, Vector{});
  const Vector mean = model.transition_mean(x);
  CHECK(step[0] - mean[0] == doctest::Approx(std::sqrt(2.0) * 0.1));
}

TEST_CASE("drift model rejects bad configurations") {
  CHECK_THROWS_AS(DriftModel(lorenz(), Vector{1.0}, 0.0, Integrator::euler_maruyama, Vector{0, 0, 0}),
                  ModelError);
  CHECK_THROWS_AS(DriftModel(lorenz(), Vector{1.0, 2.0, 3.0}, 0.01, Integrator::klauder_petersen,
                             Vector{0, 0, 0}),
                  ModelError);
  CHECK_THROWS_AS(DriftModel(lorenz(), Vector{1.0}, 0.01, Integrator::exponential_euler, Vector{0, 0, 0}),
                  ModelError);
  const DriftModel kp(lorenz(), Vector{1.0}, 0.01, Integrator::klauder_petersen, Vector{0, 0, 0});
  CHECK(kp.auxiliary_normals() == 3);
  CHECK_FALSE(kp.has_analytic_transition());
  CHECK(parse_integrator(to_string(Integrator::rk4_additive)) == Integrator::rk4_additive);
}

TEST_CASE("integrators are deterministic given the stream") {
  const DriftModel kp(lorenz(), Vector{std::sqrt(2.0)}, 0.01, Integrator::klauder_petersen,
                      Vector{1, 1, 1});
  RngStream a(5, 1), b(5, 1);
  Vector xa{1, 1, 1}, xb{1, 1, 1};
  for (int i = 0; i < 50; ++i) {
    xa = kp.step(xa, a);
    xb = kp.step(xb, b);
  }
  CHECK(xa == xb);
}

TEST_CASE("observations") {
  const ObservationModel exact = ObservationModel::identity(3, 0.0);
  RngStream rng(8, 8);
  const Vector x{1, 2, 3};
  CHECK(exact.observe(x, rng) == x);
  CHECK(exact.singular());

  const ObservationModel cubic(DenseMatrix::identity(1), ObservationNonlinearity::cubic, Vector{0.0}, 1);
  CHECK(cubic.apply(Vector{2.0})[0] == doctest::Approx(10.0));

  const ObservationModel noisy = ObservationModel::identity(3, std::sqrt(0.1));
  const std::size_t n = 100000;
  Vector sq(3, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector b = noisy.observe(x, rng);
    for (std::size_t c = 0; c < 3; ++c) sq[c] += (b[c] - x[c]) * (b[c] - x[c]);
  }
  // 3σ band for the variance estimate is 0.1·3·√(2/n) ≈ 0.0013
  for (double s : sq) CHECK(std::abs(s / n - 0.1) < 0.0015);

  const std::size_t idx[] = {0};
  const ObservationModel first = ObservationModel::select(3, idx, 0.5);
  CHECK(first.observed_dimension() == 1);
  CHECK(first.apply(x)[0] == 1.0);
}

TEST_CASE("likelihood term derivatives for the cubic observation") {
  SksParams p;
  p.modes = 6;
  const Vector loc = sks_equidistant_locations(3, p);
  const ObservationModel obs =
      ObservationModel::sks_physical(p, loc, ObservationNonlinearity::cubic, 0.4);
  RngStream rng(12, 1);
  const Vector x = random_vector(rng, 6, 0.3);
  const Vector b = random_vector(rng, 3);
  const auto term = obs.likelihood_term(x, b, true, true);
  CHECK(term.value == doctest::Approx(obs.likelihood_value(x, b)));
  const auto value = [&](const Vector& y) { return Vector{obs.likelihood_value(y, b)}; };
  const DenseMatrix g = fd_jacobian(value, x);
  for (std::size_t i = 0; i < 6; ++i) CHECK(term.gradient[i] == doctest::Approx(g(0, i)).epsilon(1e-6));
  const DenseMatrix h =
      fd_jacobian([&](const Vector& y) { return obs.likelihood_term(y, b, false, false).gradient; }, x);
  CHECK(max_rel_diff(term.hessian, h) < 1e-7);
  CHECK_THROWS_AS(ObservationModel::identity(2, 0.0).likelihood_term(Vector{0, 0}, Vector{0, 0}, true, true),
                  ModelError);
}

}  // TEST_SUITE
