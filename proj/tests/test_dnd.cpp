#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dnd/dnd.hpp"
#include "dnd/noise.hpp"
#include "dnd/problems.hpp"
#include "support.hpp"

#include <cmath>
#include <memory>

using namespace dnd;
using testing_support::random_matrix;
using testing_support::random_unit;

namespace {

Matrix rotation_generator() {
    Matrix j(2, 2);
    j << 0.0, -1.0, 1.0, 0.0;
    return j;
}

std::shared_ptr<BilinearModel> scalar_gbm(double a, double s) {
    Matrix b(1, 1);
    b << a;
    Matrix sg(1, 1);
    sg << s;
    return std::make_shared<BilinearModel>(b, std::vector<Matrix>{sg});
}

// GL drift without closed forms, so normalized coefficients go through division or the Jacobian.
FunctionModel::Spec cubic_spec(bool with_second) {
    FunctionModel::Spec spec;
    spec.dim = 1;
    spec.drift = [](const Vector& x) { return Vector(x - x.array().cube().matrix()); };
    spec.diffusion = [](int, const Vector& x) { return Vector(2.0 * x); };
    spec.drift_jacobian_at_zero = Matrix::Identity(1, 1);
    spec.diffusion_jacobians_at_zero = {Matrix(2.0 * Matrix::Identity(1, 1))};
    if (with_second) {
        spec.drift_second_directional = [](const Vector& z) { return Vector::Zero(z.size()).eval(); };
        spec.diffusion_second_directional = [](int, const Vector& z) { return Vector::Zero(z.size()).eval(); };
    }
    return spec;
}

}  // namespace

TEST_CASE("norm/direction split") {
    const DndState s = DndState::from_point(make_vector({3.0, -4.0}));
    CHECK(s.eta == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(s.zhat.isApprox(make_vector({0.6, -0.8}), 1e-15));
    CHECK(s.point().isApprox(make_vector({3.0, -4.0}), 1e-15));

    // Scaling by the infinity norm keeps extreme magnitudes representable.
    const DndState big = DndState::from_point(make_vector({1e300, 1e300}));
    CHECK(std::isfinite(big.eta));
    CHECK(big.zhat.norm() == doctest::Approx(1.0).epsilon(1e-15));
    const DndState tiny = DndState::from_point(make_vector({1e-310, 0.0}));
    CHECK(tiny.eta > 0.0);
    CHECK(tiny.zhat(0) == 1.0);

    CHECK_THROWS_AS(DndState::from_point(Vector::Zero(2)), PreconditionError);
    CHECK_THROWS_AS(DndState::from_point(make_vector({NAN, 1.0})), PreconditionError);
}

TEST_CASE("normalized coefficients") {
    const auto gl = make_test_problem(GinzburgLandau46{1.0, 1.0, 2.0});
    const Vector plus = make_vector({1.0});
    CHECK(normalized_drift(*gl, 2.0, plus)(0) == -3.0);
    CHECK(normalized_drift(*gl, 0.0, plus)(0) == 1.0);
    CHECK(normalized_diffusion(*gl, 0, 0.3, plus)(0) == 2.0);

    std::mt19937_64 rng(1);
    Matrix b = random_matrix(rng, 3);
    const BilinearModel bil(b, {random_matrix(rng, 3)});
    const Vector z = random_unit(rng, 3);
    for (double eta : {0.0, 1e-9, 1.0, 1e6}) CHECK(normalized_drift(bil, eta, z) == b * z);

    const double eps = 8.0;
    const auto rot = make_test_problem(Rotation41{-4.0, 8.0, eps});
    const Vector z2 = make_vector({0.6, 0.8});
    for (double eta : {0.0, 1.0, 50.0}) {
        CHECK(normalized_diffusion(*rot, 1, eta, z2).isApprox(eps * rotation_generator() * z2, 1e-15));
    }

    const auto nl = make_test_problem(NonlinearRot47{6.0, 3.0});
    const double eta = 0.7;
    CHECK(normalized_diffusion(*nl, 0, eta, z2).isApprox(6.0 * std::sqrt(2.0 + std::cos(eta * 0.6)) * z2, 1e-15));

    // The augmented shifted system uses its Jacobian at eta = 0.
    const AugmentedModel aug(make_test_problem(Shifted48{}), 1.0);
    const Vector u = make_vector({0.0, 0.6, 0.8});
    CHECK(normalized_diffusion(aug, 0, 0.0, u).isApprox(aug.diffusion_jacobian_at_zero(0) * u, 1e-15));
}

TEST_CASE("generic normalized coefficients switch to the Taylor branch near zero") {
    const FunctionModel plain(cubic_spec(false));
    const Vector z = make_vector({1.0});
    // Above the switch: division. (eta - eta^3)/eta = 1 - eta^2.
    CHECK(normalized_drift(plain, 0.5, z)(0) == doctest::Approx(0.75).epsilon(1e-15));
    // Below: Jacobian at 0.
    CHECK(normalized_drift(plain, 1e-8, z)(0) == 1.0);
    CHECK(normalized_drift(plain, 0.0, z)(0) == 1.0);
    CHECK(normalized_diffusion(plain, 0, 0.0, z)(0) == 2.0);
    // Both branches agree across the switch to O(eta^2).
    const double sw = eta_switch(plain);
    CHECK(std::abs(normalized_drift(plain, sw, z)(0) - normalized_drift(plain, sw * 0.999, z)(0)) < 1e-10);

    const FunctionModel second(cubic_spec(true));
    CHECK(normalized_drift(second, 1e-8, z)(0) == 1.0);

    FunctionModel::Spec bad = cubic_spec(false);
    bad.drift = [](const Vector& x) { return Vector(x * NAN); };
    CHECK_THROWS_AS(normalized_drift(FunctionModel(bad), 1.0, z), EvaluationError);
}

TEST_CASE("Taylor coefficients of the normalized function") {
    const Vector one = make_vector({1.0});
    auto cube = [](const Vector& x) { return x(0) * x(0) * x(0); };
    auto ident = [](const Vector& x) { return x(0); };
    auto sine = [](const Vector& x) { return std::sin(x(0)); };
    CHECK(taylor_coefficient(cube, 2, one) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(std::abs(taylor_coefficient(ident, 1, one)) < 1e-6);
    CHECK(taylor_coefficient(sine, 2, one) == doctest::Approx(-1.0 / 3.0).epsilon(1e-6));
    CHECK(taylor_coefficient(sine, 0, one) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(taylor_coefficient(cube, 2, one, 6.0) == 2.0);

    // Along a direction: f(x) = x1 * x2^2 on z = (1,1)/sqrt2 gives t^3 / 2^{3/2}.
    const Vector z = make_vector({1.0, 1.0}) / std::sqrt(2.0);
    auto mixed = [](const Vector& x) { return x(0) * x(1) * x(1); };
    CHECK(taylor_coefficient(mixed, 2, z) == doctest::Approx(6.0 / std::pow(2.0, 1.5) / 3.0).epsilon(1e-6));

    CHECK_THROWS_AS(taylor_coefficient(ident, -1, one), ParameterError);
    CHECK_THROWS_AS(taylor_coefficient(ident, 1, one, NAN), EvaluationError);
}

TEST_CASE("psi and mu") {
    const auto gl = make_test_problem(GinzburgLandau46{1.0, 1.0, 2.0});
    for (double z0 : {-1.0, 1.0}) CHECK(psi(*gl, 0.8, make_vector({z0})).isZero(1e-15));

    const double eps = 1.5;
    const BilinearModel rotation(Matrix::Zero(2, 2), {Matrix(eps * rotation_generator())});
    const Matrix scaled = 0.7 * Matrix::Identity(2, 2);
    const BilinearModel dilation(Matrix::Zero(2, 2), {scaled});
    std::mt19937_64 rng(3);
    for (int i = 0; i < 20; ++i) {
        const Vector z = random_unit(rng, 2);
        CHECK(psi(rotation, 1.0, z).isApprox(-(eps * eps / 2.0) * z, 1e-14));
        CHECK(psi(dilation, 1.0, z).isZero(1e-15));
        CHECK(mu(rotation, 1.0, z) == doctest::Approx(eps * eps / 2.0).epsilon(1e-14));
        CHECK(mu(*make_test_problem(Rotation41{-4.0, 8.0, 8.0}), 2.0, z) == doctest::Approx(-4.0).epsilon(1e-14));
    }
    for (double eta : {0.0, 0.5, 3.0}) {
        CHECK(mu(*gl, eta, make_vector({1.0})) == doctest::Approx(1.0 - eta * eta - 2.0).epsilon(1e-15));
    }
}

TEST_CASE("one-dimensional step reduces to the scalar exponential update") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    const auto gl = make_test_problem(GinzburgLandau46{1.0, 1.0, 2.0});
    for (int i = 0; i < 200; ++i) {
        const double x = 3.0 * n(rng);
        const double dw = 0.5 * n(rng);
        const DndState next = dnd_step(*gl, DndState::from_point(make_vector({x})), 0.25, {&dw, 1});
        CHECK(std::abs(next.zhat(0)) == 1.0);
        const double scalar = dnd_scalar_step(*gl, x, 0.25, {&dw, 1});
        CHECK(next.point()(0) == doctest::Approx(scalar).epsilon(1e-13));
        CHECK(std::signbit(scalar) == std::signbit(x));
    }
    const double zero = 0.0;
    CHECK(dnd_scalar_step(*gl, 1.0, 1.0, {&zero, 1}) == doctest::Approx(std::exp(-2.0)).epsilon(1e-15));
    CHECK(dnd_scalar_step(*gl, -1e-200, 1.0, {&zero, 1}) < 0.0);
    CHECK_THROWS_AS(dnd_scalar_step(*make_test_problem(Rotation41{}), 1.0, 1.0, {&zero, 1}), PreconditionError);
}

TEST_CASE("scalar GBM update is the exact solution") {
    const auto gbm = scalar_gbm(1.0, 0.5);
    const double dw = 0.37;
    CHECK(dnd_scalar_step(*gbm, 2.0, 0.1, {&dw, 1}) ==
          doctest::Approx(2.0 * std::exp((1.0 - 0.125) * 0.1 + 0.5 * dw)).epsilon(1e-15));
}

TEST_CASE("pure rotation step") {
    const double eps = 3.0;
    const Matrix j = rotation_generator();
    const BilinearModel rotation(Matrix::Zero(2, 2), {Matrix(eps * j)});
    const DndState s{2.0, make_vector({0.6, 0.8})};
    for (double dw : {-0.4, 0.0, 0.9}) {
        const double dt = 0.1;
        const auto out = dnd_step_detail(rotation, s, dt, {&dw, 1});
        CHECK(out.next.eta == doctest::Approx(2.0 * std::exp(eps * eps * dt / 2.0)).epsilon(1e-15));
        const Vector expected = (1.0 - eps * eps * dt / 2.0) * s.zhat + eps * (j * s.zhat) * dw;
        CHECK(out.zbar.isApprox(expected, 1e-14));
        const double t = 1.0 - eps * eps * dt / 2.0;
        CHECK(out.zbar_norm_sq == doctest::Approx(t * t + eps * eps * dw * dw).epsilon(1e-14));
    }
}

TEST_CASE("matrix form agrees with the generic step on bilinear models") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 100; ++trial) {
        const int d = 1 + trial % 3;
        const int m = 1 + trial % 2;
        std::vector<Matrix> sig;
        for (int k = 0; k < m; ++k) sig.push_back(random_matrix(rng, d, 0.7));
        const BilinearModel model(random_matrix(rng, d), sig);
        const DndState s{std::exp(n(rng)), random_unit(rng, d)};
        std::vector<double> dw(static_cast<std::size_t>(m));
        for (double& w : dw) w = 0.2 * n(rng);
        const DndState a = dnd_step(model, s, 0.05, dw);
        const DndState b = dnd_bilinear_step(model.drift_matrix(), model.diffusion_matrices(), s, 0.05, dw);
        CHECK(std::abs(a.eta - b.eta) <= 1e-13 * a.eta);
        CHECK((a.zhat - b.zhat).norm() <= 1e-13);
    }
}

TEST_CASE("noiseless matrix step") {
    Matrix b(2, 2);
    b << -1.0, 2.0, 0.5, 0.3;
    const DndState s{1.5, make_vector({0.8, -0.6})};
    const std::vector<Matrix> none;
    const auto out = dnd_bilinear_step_detail(b, none, s, 0.1, {});
    const double zbz = s.zhat.dot(b * s.zhat);
    CHECK(out.next.eta == doctest::Approx(1.5 * std::exp(zbz * 0.1)).epsilon(1e-15));
    CHECK(out.zbar.isApprox(s.zhat + (b * s.zhat - zbz * s.zhat) * 0.1, 1e-15));
}

TEST_CASE("the rotation model keeps the norm identity") {
    const double eps = 8.0;
    const auto model = make_test_problem(Rotation41{-4.0, 8.0, eps});
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n;
    for (int i = 0; i < 1000; ++i) {
        const double dt = std::ldexp(1.0, -static_cast<int>(i % 12));
        const double w[2] = {std::sqrt(dt) * n(rng), std::sqrt(dt) * n(rng)};
        const auto out = dnd_step_detail(*model, DndState{1.0, random_unit(rng, 2)}, dt, w);
        const double t = 1.0 - eps * eps * dt / 2.0;
        CHECK(out.zbar_norm_sq == doctest::Approx(t * t + eps * eps * w[1] * w[1]).epsilon(1e-12));
    }
    // eps^2 dt = 2 with two-point noise: |zbar|^2 = 1 + eps^4 dt^2 / 4 = 2.
    const double dt = 2.0 / (eps * eps);
    const double w[2] = {std::sqrt(dt), -std::sqrt(dt)};
    const auto out = dnd_step_detail(*model, DndState{1.0, make_vector({1.0, 0.0})}, dt, w);
    CHECK(out.zbar_norm_sq == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("norm of the rotation model is integrated without error") {
    // b, sigma I and eps J commute, so |X_t| depends on W^1 only and the norm update is exact.
    const Rotation41 p{-4.0, 8.0, 8.0};
    const auto model = make_test_problem(p);
    NoiseStream stream({NoiseLaw::Gaussian, 4}, 0);
    const Vector x0 = make_vector({1.0, 2.0});
    DndState s = DndState::from_point(x0);
    double w1 = 0.0;
    double w2 = 0.0;
    const double dt = 1.0 / 64;
    for (int i = 1; i <= 640; ++i) {
        double dw[2];
        stream.increments(dt, dw);
        w1 += dw[0];
        w2 += dw[1];
        s = dnd_step(*model, s, dt, dw);
        const double exact = exact_rotation41(p, x0, i * dt, w1, w2).norm();
        REQUIRE(std::abs(std::log(s.eta / exact)) < 1e-10);
    }
}

TEST_CASE("projection safeguards") {
    const double eps = 2.0;
    const BilinearModel rotation(Matrix::Zero(2, 2), {Matrix(eps * rotation_generator())});
    const DndState s{1.0, make_vector({0.6, 0.8})};
    const double zero = 0.0;

    // eps^2 dt = 2 and no noise: zbar = (1 - eps^2 dt / 2) z = 0 exactly.
    const auto kept = dnd_step_detail(rotation, s, 0.5, {&zero, 1});
    CHECK(kept.safeguard == Safeguard::KeptDirection);
    CHECK(kept.next.zhat == s.zhat);

    // Slightly past it: zbar is a tiny negative multiple of z.
    const auto pre = dnd_step_detail(rotation, s, 0.5 + 0x1.0p-40, {&zero, 1});
    CHECK(pre.safeguard == Safeguard::Preconditioned);
    CHECK(pre.next.zhat.isApprox(-s.zhat, 1e-3));
    CHECK(pre.next.zhat.norm() == doctest::Approx(1.0).epsilon(1e-15));

    const auto plain = dnd_step_detail(rotation, s, 0.1, {&zero, 1});
    CHECK(plain.safeguard == Safeguard::None);
}

TEST_CASE("non-finite coefficients surface as evaluation errors") {
    const BilinearModel model(Matrix::Identity(2, 2), {Matrix::Identity(2, 2)});
    const double huge = 1e300;
    CHECK_THROWS_AS(dnd_step(model, DndState{1e300, make_vector({1.0, 0.0})}, 1e10, {&huge, 1}), EvaluationError);
    CHECK_THROWS_AS(dnd_step(model, DndState{1.0, make_vector({1.0, 0.0})}, 1.0, std::span<const double>()),
                    PreconditionError);
}

TEST_CASE("alpha default") {
    CHECK(alpha_default(*make_test_problem(Rotation41{})) == 0.0);
    CHECK(alpha_default(*make_test_problem(NonlinearRot47{})) == 0.0);
    CHECK(alpha_default(*make_test_problem(Shifted48{})) == 1.0);

    FunctionModel::Spec spec;
    spec.dim = 2;
    spec.drift = [](const Vector& x) { return Vector(x + make_vector({6.0, 0.0})); };
    spec.diffusion = [](int, const Vector& x) { return Vector(x); };
    CHECK(alpha_default(FunctionModel(spec)) == 3.0);
}

TEST_CASE("general step without shift is the plain step") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n;
    for (const auto& model : {make_test_problem(Rotation41{}), make_test_problem(NonlinearRot47{}),
                              make_test_problem(Rotation41{4.0, 4.0, 3.0})}) {
        for (int i = 0; i < 50; ++i) {
            const Vector x = make_vector({n(rng), n(rng)});
            const double dw[2] = {0.1 * n(rng), 0.1 * n(rng)};
            const Vector general = dnd_general_step(*model, x, 0.0, 0.01, dw);
            const Vector plain = dnd_step(*model, DndState::from_point(x), 0.01, dw).point();
            CHECK(general == plain);
        }
    }
    const double dw[2] = {0.0, 0.0};
    CHECK_THROWS_AS(dnd_general_step(*make_test_problem(Rotation41{}), Vector::Zero(2), 0.0, 0.1, dw),
                    PreconditionError);
    CHECK_THROWS_AS(dnd_general_step(*make_test_problem(Shifted48{}), make_vector({1.0, 1.0}), 0.0, 0.1, dw),
                    PreconditionError);
}

TEST_CASE("augmented state") {
    const GeneralStepper stepper(make_test_problem(Shifted48{}), 1.0);
    const DndState s = stepper.augmented_state(make_vector({4.0, 2.0}));
    CHECK(s.eta == doctest::Approx(std::sqrt(21.0)).epsilon(1e-15));
    CHECK(s.zhat.head(2).isApprox(make_vector({4.0, 2.0}) / std::sqrt(21.0), 1e-15));
    CHECK(s.zhat(2) == doctest::Approx(1.0 / std::sqrt(21.0)).epsilon(1e-15));
    CHECK(s.zhat.squaredNorm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("closed-form last component matches the augmented direction update") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n;
    for (double alpha : {1.0, 0.25, -2.0}) {
        const GeneralStepper stepper(make_test_problem(Shifted48{}), alpha);
        double worst = 0.0;
        for (int i = 0; i < 500; ++i) {
            const Vector x = make_vector({2.0 * n(rng), 2.0 * n(rng)});
            const double dt = std::ldexp(1.0, -static_cast<int>(i % 10));
            const double dw[2] = {std::sqrt(dt) * n(rng), std::sqrt(dt) * n(rng)};
            DndStepDetail detail;
            stepper.step(x, dt, dw, &detail);
            const double v = stepper.vbar(x, dt, dw);
            worst = std::max(worst, std::abs(v - detail.zbar(2)) / std::max(1.0, std::abs(v)));
        }
        CAPTURE(alpha);
        CHECK(worst < 1e-13);
    }
}

TEST_CASE("last component with zero drift and zero noise") {
    FunctionModel::Spec spec;
    spec.dim = 2;
    spec.noise_count = 1;
    spec.drift = [](const Vector& x) { return Vector::Zero(x.size()).eval(); };
    spec.diffusion = [](int, const Vector& x) { return Vector(0.5 * x + make_vector({1.0, -1.0})); };
    const auto model = std::make_shared<FunctionModel>(spec);
    const double alpha = 0.8;
    const GeneralStepper stepper(model, alpha);
    const Vector x = make_vector({1.0, 3.0});
    const double dt = 0.05;
    const double zero = 0.0;

    // Independent evaluation of the zero-noise formula on the augmented system.
    const double eta = std::sqrt(x.squaredNorm() + alpha * alpha);
    Vector u(3);
    u << x / eta, alpha / eta;
    // g = sigma-bar of the augmented system: (0.5 x + c v / alpha, 0) / eta at (x, alpha).
    Vector g(3);
    g << (0.5 * x + make_vector({1.0, -1.0})) / eta, 0.0;
    const double ug = u.dot(g);
    const double expected = alpha / eta * (1.0 + dt * (1.5 * ug * ug - 0.5 * g.squaredNorm()));
    CHECK(stepper.vbar(x, dt, {&zero, 1}) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("steps keep a unit direction and a positive norm") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> n;
    for (const auto& model : {make_test_problem(Rotation41{}), make_test_problem(Rotation41{4.0, 4.0, 3.0}),
                              make_test_problem(NonlinearRot47{})}) {
        for (double dt : {1.0, 0x1.0p-5, 0x1.0p-10}) {
            NoiseStream stream({NoiseLaw::Gaussian, 6}, 0);
            DndState s;
            for (int i = 0; i < 2000; ++i) {
                // Restart before the norm leaves the double range.
                if (i == 0 || s.eta < 1e-200 || s.eta > 1e200) s = DndState{1.0, random_unit(rng, 2)};
                double dw[2];
                stream.increments(dt, dw);
                s = dnd_step(*model, s, dt, dw);
                REQUIRE(std::abs(s.zhat.norm() - 1.0) < 1e-12);
                REQUIRE(s.eta > 0.0);
            }
        }
    }
}
