#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "volray/field.hpp"
#include "volray/rng.hpp"

using namespace volray;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

FieldArchitecture tiny_arch(FieldVariant variant) {
    FieldArchitecture a;
    a.variant = variant;
    a.trunk_depth = 3;
    a.trunk_width = 8;
    a.skip_layers = {2};
    a.k_position = 2;
    if (variant == FieldVariant::vanilla_symmetric) {
        a.view_branch_depth = 0;
        a.view_branch_width = 0;
        a.k_direction = 2;
    } else {
        a.view_branch_depth = 2;
        a.view_branch_width = 6;
        a.k_direction = 1;
    }
    return a;
}

/// Scalar objective backing the gradient check:
/// f(theta) = d_sigma * sigma + d_color . color.
double objective(const FieldModel& m, const std::vector<double>& pos, const Vec3& dir,
                 double d_sigma, const Vec3& d_color) {
    const FieldEval e = field_forward(m, pos, dir);
    return d_sigma * e.sigma + d_color.dot(e.color);
}

/// Central-difference oracle over every parameter entry.
void check_gradients(FieldModel& m, const std::vector<double>& pos, const Vec3& dir,
                     double d_sigma, const Vec3& d_color, double rel_tol) {
    const FieldEval e = field_forward(m, pos, dir);
    const GradientSet g = field_backward(m, e.trace, d_sigma, d_color);
    const double h = 1e-5;
    for (std::size_t p = 0; p < m.params.size(); ++p) {
        MatrixXd& value = m.params[p].value;
        for (Eigen::Index i = 0; i < value.size(); ++i) {
            const double saved = value.data()[i];
            value.data()[i] = saved + h;
            const double up = objective(m, pos, dir, d_sigma, d_color);
            value.data()[i] = saved - h;
            const double down = objective(m, pos, dir, d_sigma, d_color);
            value.data()[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double bp = g.grads[p].data()[i];
            const double err = std::abs(fd - bp) / std::max({1e-6, std::abs(fd), std::abs(bp)});
            if (err >= rel_tol) {
                CAPTURE(m.params[p].name);
                CAPTURE(i);
                CAPTURE(fd);
                CAPTURE(bp);
            }
            REQUIRE(err < rel_tol);
        }
    }
}

}  // namespace

TEST_CASE("positional_encode examples") {
    const std::vector<double> zero{0.0};
    const auto e0 = positional_encode(zero, 0);
    REQUIRE(e0.size() == 2);
    CHECK(e0[0] == doctest::Approx(0.0));
    CHECK(e0[1] == doctest::Approx(1.0));

    const std::vector<double> half_pi{M_PI / 2};
    const auto e1 = positional_encode(half_pi, 1);
    REQUIRE(e1.size() == 4);
    CHECK(e1[0] == doctest::Approx(1.0).epsilon(1e-12));   // sin(pi/2)
    CHECK(e1[1] == doctest::Approx(0.0).epsilon(1e-12));   // cos(pi/2)
    CHECK(e1[2] == doctest::Approx(0.0).epsilon(1e-12));   // sin(pi)
    CHECK(e1[3] == doctest::Approx(-1.0).epsilon(1e-12));  // cos(pi)

    const std::vector<double> p3{0.1, -0.2, 0.3};
    CHECK(positional_encode(p3, 10).size() == 66);
}

TEST_CASE("positional_encode range and length for many (k, dim)") {
    Rng rng(5);
    for (int k : {0, 1, 2, 5, 8, 12}) {
        for (int dim : {1, 3, 4}) {
            std::vector<double> p(static_cast<std::size_t>(dim));
            for (double& v : p) v = rng.uniform(-10.0, 10.0);
            const auto enc = positional_encode(p, k);
            CHECK(enc.size() == static_cast<std::size_t>(2 * (k + 1) * dim));
            CHECK(enc.size() == static_cast<std::size_t>(EncodingSpec{k, dim}.output_dim()));
            for (double v : enc) {
                CHECK(v <= 1.0);
                CHECK(v >= -1.0);
            }
        }
    }
}

TEST_CASE("encode_batch matches positional_encode") {
    Rng rng(6);
    MatrixXd p(3, 5);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform(-4.0, 4.0);
    const MatrixXd enc = encode_batch(p, 4);
    for (Eigen::Index c = 0; c < 5; ++c) {
        const std::vector<double> col{p(0, c), p(1, c), p(2, c)};
        const auto single = positional_encode(col, 4);
        for (Eigen::Index r = 0; r < enc.rows(); ++r)
            CHECK(enc(r, c) == doctest::Approx(single[static_cast<std::size_t>(r)]).epsilon(1e-15));
    }
}

TEST_CASE("init_field determinism and shapes") {
    const FieldArchitecture arch = nerf_mlp_architecture(FieldInput::euclidean_3d);
    const FieldModel a = init_field(arch, 42);
    const FieldModel b = init_field(arch, 42);
    REQUIRE(a.params.size() == b.params.size());
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        CHECK(a.params[i].name == b.params[i].name);
        CHECK(a.params[i].value == b.params[i].value);
    }
    const FieldModel c = init_field(arch, 43);
    CHECK(a.param("trunk0.weight") != c.param("trunk0.weight"));

    // layer-0 weight connects the encoded position to the trunk width
    CHECK(a.param("trunk0.weight").rows() == arch.trunk_width);
    CHECK(a.param("trunk0.weight").cols() == arch.encoded_position_dim());
    CHECK(a.param("trunk0.bias").rows() == arch.trunk_width);
    // skip layer re-ingests the encoded position
    CHECK(a.param("trunk2.weight").cols() == arch.trunk_width + arch.encoded_position_dim());
}

TEST_CASE("init_field rejects empty architectures") {
    FieldArchitecture arch = nerf_mlp_architecture(FieldInput::euclidean_3d);
    arch.trunk_depth = 0;
    CHECK_THROWS_AS(init_field(arch, 1), InvalidArchitecture);
    arch.trunk_depth = 4;
    arch.trunk_width = 0;
    CHECK_THROWS_AS(init_field(arch, 1), InvalidArchitecture);
}

TEST_CASE("field_forward with all-zero parameters") {
    for (FieldVariant variant : {FieldVariant::nerf_asymmetric, FieldVariant::vanilla_symmetric}) {
        FieldModel m = init_field(tiny_arch(variant), 1);
        for (Parameter& p : m.params) p.value.setZero();
        const std::vector<double> pos{0.2, -0.1, 0.4};
        const FieldEval e = field_forward(m, pos, Vec3{0, 0, 1});
        CHECK(e.sigma == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        CHECK(e.color.x == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(e.color.y == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(e.color.z == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("asymmetric net ignores direction when view weights vanish") {
    FieldModel m = init_field(tiny_arch(FieldVariant::nerf_asymmetric), 2);
    m.param("view0.weight").setZero();
    const std::vector<double> pos{0.3, 0.2, -0.5};
    const FieldEval a = field_forward(m, pos, Vec3{0, 0, 1});
    const FieldEval b = field_forward(m, pos, Vec3{1, 0, 0});
    CHECK(a.sigma == b.sigma);
    CHECK(a.color.x == b.color.x);
    CHECK(a.color.y == b.color.y);
    CHECK(a.color.z == b.color.z);
}

TEST_CASE("asymmetry invariant: sigma never depends on direction") {
    Rng rng(9);
    FieldModel m = init_field(tiny_arch(FieldVariant::nerf_asymmetric), 3);
    for (int i = 0; i < 100; ++i) {
        const std::vector<double> pos{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        Vec3 d1{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        Vec3 d2{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        if (d1.norm() < 1e-3 || d2.norm() < 1e-3) continue;
        d1 = d1.normalized();
        d2 = d2.normalized();
        CHECK(field_forward(m, pos, d1).sigma == field_forward(m, pos, d2).sigma);
    }
}

TEST_CASE("field_forward is pure") {
    FieldModel m = init_field(tiny_arch(FieldVariant::nerf_asymmetric), 4);
    const std::vector<double> pos{0.1, 0.2, 0.3};
    const Vec3 dir = Vec3{0.5, 0.5, std::sqrt(0.5)}.normalized();
    const FieldEval a = field_forward(m, pos, dir);
    const FieldEval b = field_forward(m, pos, dir);
    CHECK(a.sigma == b.sigma);
    CHECK(a.color.x == b.color.x);
}

TEST_CASE("field_forward shape mismatch") {
    FieldModel m = init_field(tiny_arch(FieldVariant::nerf_asymmetric), 5);
    const std::vector<double> bad{0.1, 0.2, 0.3, 0.4};  // 4 components for a 3d field
    CHECK_THROWS_AS(field_forward(m, bad, Vec3{0, 0, 1}), ShapeMismatch);
}

TEST_CASE("vanilla layer-0 concatenation is order-symmetric up to weight permutation") {
    FieldArchitecture arch = tiny_arch(FieldVariant::vanilla_symmetric);
    REQUIRE(arch.k_position == arch.k_direction);  // swap needs equal encodings
    FieldModel m = init_field(arch, 6);
    const int p = arch.encoded_position_dim();
    const int q = arch.encoded_direction_dim();
    REQUIRE(p == q);

    FieldModel swapped = m;
    {
        MatrixXd& w0 = swapped.param("color_trunk0.weight");
        MatrixXd permuted(w0.rows(), w0.cols());
        permuted.leftCols(q) = w0.rightCols(q);
        permuted.rightCols(p) = w0.leftCols(p);
        w0 = permuted;
        for (int layer : arch.skip_layers) {
            MatrixXd& ws = swapped.param("color_trunk" + std::to_string(layer) + ".weight");
            MatrixXd perm(ws.rows(), ws.cols());
            perm.leftCols(arch.trunk_width) = ws.leftCols(arch.trunk_width);
            perm.middleCols(arch.trunk_width, q) = ws.rightCols(q);
            perm.rightCols(p) = ws.middleCols(arch.trunk_width, p);
            ws = perm;
        }
    }

    Rng rng(100);
    for (int trial = 0; trial < 20; ++trial) {
        Vec3 x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        Vec3 d{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        if (x.norm() < 1e-3 || d.norm() < 1e-3) continue;
        x = x.normalized();
        d = d.normalized();
        const std::vector<double> xv{x.x, x.y, x.z};
        const std::vector<double> dv{d.x, d.y, d.z};
        const FieldEval straight = field_forward(m, xv, d);
        const FieldEval crossed = field_forward(swapped, dv, x);
        CHECK(straight.color.x == doctest::Approx(crossed.color.x).epsilon(1e-12));
        CHECK(straight.color.y == doctest::Approx(crossed.color.y).epsilon(1e-12));
        CHECK(straight.color.z == doctest::Approx(crossed.color.z).epsilon(1e-12));
    }
}

TEST_CASE("field_backward: zero cotangent gives zero gradients") {
    FieldModel m = init_field(tiny_arch(FieldVariant::nerf_asymmetric), 7);
    const std::vector<double> pos{0.4, -0.3, 0.2};
    const FieldEval e = field_forward(m, pos, Vec3{0, 1, 0});
    const GradientSet g = field_backward(m, e.trace, 0.0, Vec3{0, 0, 0});
    for (const MatrixXd& grad : g.grads) CHECK(grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("field_backward linearity in the cotangent") {
    FieldModel m = init_field(tiny_arch(FieldVariant::vanilla_symmetric), 8);
    const std::vector<double> pos{0.4, -0.3, 0.2};
    const Vec3 dir = Vec3{1, 2, -1}.normalized();
    const FieldEval e = field_forward(m, pos, dir);
    const GradientSet g1 = field_backward(m, e.trace, 0.3, Vec3{0.1, -0.2, 0.5});
    const GradientSet g2 = field_backward(m, e.trace, 0.6, Vec3{0.2, -0.4, 1.0});
    for (std::size_t i = 0; i < g1.grads.size(); ++i)
        CHECK((2.0 * g1.grads[i] - g2.grads[i]).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("gradient check against central differences, both variants") {
    // Five random (seed, input) triples per variant; tolerance 1e-4.
    for (FieldVariant variant : {FieldVariant::nerf_asymmetric, FieldVariant::vanilla_symmetric}) {
        for (std::uint64_t seed : {11ull, 12ull, 13ull, 14ull, 15ull}) {
            Rng rng = Rng::derive(seed, {99});
            FieldModel m = init_field(tiny_arch(variant), seed);
            const std::vector<double> pos{rng.uniform(-1, 1), rng.uniform(-1, 1),
                                          rng.uniform(-1, 1)};
            Vec3 d{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
            d = d.norm() < 1e-3 ? Vec3{0, 0, 1} : d.normalized();
            const double d_sigma = rng.uniform(-1, 1);
            const Vec3 d_color{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
            check_gradients(m, pos, d, d_sigma, d_color, 1e-4);
        }
    }
}

TEST_CASE("gradient check with frozen opacity: sigma head untouched, color path exact") {
    FieldModel m = init_field(tiny_arch(FieldVariant::nerf_asymmetric), 21);
    m.frozen_opacity = FrozenOpacity{FrozenOpacity::Kind::shell, 10.0, 1.0, 0.2};
    const std::vector<double> pos{0.99, 0.05, 0.0};  // inside the shell band
    const Vec3 dir{0, 0, 1};
    const FieldEval e = field_forward(m, pos, dir);
    CHECK(e.sigma == doctest::Approx(10.0));
    const GradientSet g = field_backward(m, e.trace, 0.7, Vec3{0.3, 0.1, -0.4});
    bool found = false;
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        if (m.params[i].name == "sigma_head.weight" || m.params[i].name == "sigma_head.bias") {
            CHECK(g.grads[i].cwiseAbs().maxCoeff() == 0.0);
            found = true;
        }
    }
    CHECK(found);
    check_gradients(m, pos, dir, 0.7, Vec3{0.3, 0.1, -0.4}, 1e-4);
}

TEST_CASE("adam_step: zero gradient leaves parameters unchanged") {
    FieldModel m = init_field(tiny_arch(FieldVariant::nerf_asymmetric), 30);
    const FieldModel before = m;
    AdamState state = make_adam_state(m);
    adam_step(m, zero_gradients(m), state, 5e-4);
    for (std::size_t i = 0; i < m.params.size(); ++i)
        CHECK(m.params[i].value == before.params[i].value);
}

TEST_CASE("adam_step: first step moves by about -lr * sign(g)") {
    FieldModel m = init_field(tiny_arch(FieldVariant::nerf_asymmetric), 31);
    const FieldModel before = m;
    AdamState state = make_adam_state(m);
    GradientSet g = zero_gradients(m);
    Rng rng(77);
    for (MatrixXd& grad : g.grads)
        for (Eigen::Index i = 0; i < grad.size(); ++i) {
            double v = rng.uniform(-2.0, 2.0);
            if (std::abs(v) < 0.1) v = 0.1;  // keep |g| well above eps
            grad.data()[i] = v;
        }
    const double lr = 1e-3;
    adam_step(m, g, state, lr);
    // bias-corrected first step: -lr * g / (|g| + eps) = -lr * sign(g)
    for (std::size_t p = 0; p < m.params.size(); ++p)
        for (Eigen::Index i = 0; i < m.params[p].value.size(); ++i) {
            const double moved = m.params[p].value.data()[i] - before.params[p].value.data()[i];
            const double expect = -lr * (g.grads[p].data()[i] > 0 ? 1.0 : -1.0);
            CHECK(moved == doctest::Approx(expect).epsilon(1e-4));
        }
}

TEST_CASE("adam_step: deterministic") {
    FieldModel m1 = init_field(tiny_arch(FieldVariant::vanilla_symmetric), 32);
    FieldModel m2 = m1;
    AdamState s1 = make_adam_state(m1);
    AdamState s2 = make_adam_state(m2);
    GradientSet g = zero_gradients(m1);
    for (MatrixXd& grad : g.grads) grad.setConstant(0.25);
    adam_step(m1, g, s1, 1e-3);
    adam_step(m2, g, s2, 1e-3);
    for (std::size_t i = 0; i < m1.params.size(); ++i)
        CHECK(m1.params[i].value == m2.params[i].value);
}

TEST_CASE("adam_step shape mismatch") {
    FieldModel m = init_field(tiny_arch(FieldVariant::nerf_asymmetric), 33);
    AdamState state = make_adam_state(m);
    GradientSet g = zero_gradients(m);
    g.grads[0].resize(2, 2);
    CHECK_THROWS_AS(adam_step(m, g, state, 1e-3), ShapeMismatch);
}

TEST_CASE("trace mismatch is rejected") {
    FieldModel m1 = init_field(tiny_arch(FieldVariant::nerf_asymmetric), 40);
    FieldModel m2 = init_field(tiny_arch(FieldVariant::vanilla_symmetric), 40);
    const std::vector<double> pos{0.1, 0.1, 0.1};
    const FieldEval e = field_forward(m1, pos, Vec3{0, 0, 1});
    CHECK_THROWS_AS(field_backward(m2, e.trace, 1.0, Vec3{1, 1, 1}), TraceMismatch);
}

TEST_CASE("checkpoint round trip is bitwise and rejects garbage") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "volray_ckpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "model.ckpt").string();

    FieldModel m = init_field(tiny_arch(FieldVariant::nerf_asymmetric), 50);
    m.frozen_opacity = FrozenOpacity{FrozenOpacity::Kind::ball, 3.5, 0.8, 0.0};
    save_checkpoint(m, path, 1234, 777);
    const Checkpoint ck = load_checkpoint(path);
    CHECK(ck.seed == 1234);
    CHECK(ck.iteration == 777);
    CHECK(ck.model.arch == m.arch);
    REQUIRE(ck.model.frozen_opacity.has_value());
    CHECK(*ck.model.frozen_opacity == *m.frozen_opacity);
    REQUIRE(ck.model.params.size() == m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        CHECK(ck.model.params[i].name == m.params[i].name);
        CHECK(ck.model.params[i].value == m.params[i].value);
    }

    const std::string bad = (dir / "bad.ckpt").string();
    std::ofstream(bad) << "this is not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint((dir / "absent.ckpt").string()), CheckpointError);
}
