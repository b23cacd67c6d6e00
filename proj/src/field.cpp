#include "volray/field.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "volray/rng.hpp"

namespace volray {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

struct LinearSpec {
    std::string name;
    int in = 0, out = 0;
};

int trunk_input_dim(const FieldArchitecture& a, int layer, int base_in) {
    int in = layer == 0 ? base_in : a.trunk_width;
    if (layer > 0 && a.skip_layers.count(layer)) in += base_in;
    return in;
}

/// Declaration order of every linear layer; fixes parameter and checkpoint layout.
std::vector<LinearSpec> layer_plan(const FieldArchitecture& a) {
    std::vector<LinearSpec> plan;
    const int p = a.encoded_position_dim();
    const int q = a.encoded_direction_dim();
    const int w = a.trunk_width;
    if (a.variant == FieldVariant::nerf_asymmetric) {
        for (int i = 0; i < a.trunk_depth; ++i)
            plan.push_back({"trunk" + std::to_string(i), trunk_input_dim(a, i, p), w});
        plan.push_back({"sigma_head", w, 1});
        plan.push_back({"feature", w, w});
        for (int j = 0; j < a.view_branch_depth; ++j)
            plan.push_back({"view" + std::to_string(j),
                            j == 0 ? w + q : a.view_branch_width, a.view_branch_width});
        plan.push_back({"rgb_head", a.view_branch_width, 3});
    } else {
        for (int i = 0; i < a.trunk_depth; ++i)
            plan.push_back({"sigma_trunk" + std::to_string(i), trunk_input_dim(a, i, p), w});
        plan.push_back({"sigma_head", w, 1});
        for (int i = 0; i < a.trunk_depth; ++i)
            plan.push_back({"color_trunk" + std::to_string(i), trunk_input_dim(a, i, p + q), w});
        plan.push_back({"rgb_head", w, 3});
    }
    return plan;
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Stable componentwise sigmoid: e = exp(-|x|); x >= 0 -> 1/(1+e), else e/(1+e).
MatrixXd sigmoid(const MatrixXd& x) {
    const Eigen::ArrayXXd e = (-x.array().abs()).exp();
    return ((x.array() >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e))).matrix();
}

/// softplus(x) = max(x, 0) + log1p(exp(-|x|)), exact and overflow-free.
Eigen::ArrayXd softplus_row(const MatrixXd& pre) {
    const Eigen::ArrayXd x = pre.row(0).transpose().array();
    return x.max(0.0) + (-x.abs()).exp().log1p();
}

MatrixXd vstack(const MatrixXd& a, const MatrixXd& b) {
    MatrixXd r(a.rows() + b.rows(), a.cols());
    r.topRows(a.rows()) = a;
    r.bottomRows(b.rows()) = b;
    return r;
}

/// y = W x + b, columnwise bias.
MatrixXd linear(const FieldModel& m, const std::string& name, const MatrixXd& x) {
    const MatrixXd& w = m.param(name + ".weight");
    const MatrixXd& b = m.param(name + ".bias");
    if (w.cols() != x.rows())
        throw ShapeMismatch("layer " + name + ": expected input dim " + std::to_string(w.cols()) +
                            ", got " + std::to_string(x.rows()));
    MatrixXd y(w.rows(), x.cols());
    y.noalias() = w * x;
    y.colwise() += b.col(0);
    return y;
}

/// d(pre-activation) for a relu layer with the given post-activation.
MatrixXd relu_mask(const MatrixXd& post_act, const MatrixXd& upstream) {
    return (post_act.array() > 0.0).select(upstream.array(), 0.0).matrix();
}

int param_index(const FieldModel& m, const std::string& name) {
    for (std::size_t i = 0; i < m.params.size(); ++i)
        if (m.params[i].name == name) return static_cast<int>(i);
    throw ShapeMismatch("no parameter named " + name);
}

/// Accumulates gradients of one linear layer given d(pre-activation).
void linear_backward(const FieldModel& m, GradientSet& g, const std::string& name,
                     const MatrixXd& d_pre, const MatrixXd& input) {
    const int wi = param_index(m, name + ".weight");
    const int bi = param_index(m, name + ".bias");
    g.grads[wi].noalias() += d_pre * input.transpose();
    g.grads[bi].col(0).noalias() += d_pre.rowwise().sum();
}

MatrixXd propagate(const FieldModel& m, const std::string& name, const MatrixXd& d_pre) {
    return m.param(name + ".weight").transpose() * d_pre;
}

json arch_to_json(const FieldArchitecture& a) {
    json j;
    j["variant"] = a.variant == FieldVariant::nerf_asymmetric ? "nerf_asymmetric" : "vanilla_symmetric";
    j["trunk_depth"] = a.trunk_depth;
    j["trunk_width"] = a.trunk_width;
    j["skip_layers"] = std::vector<int>(a.skip_layers.begin(), a.skip_layers.end());
    j["view_branch_depth"] = a.view_branch_depth;
    j["view_branch_width"] = a.view_branch_width;
    j["k_position"] = a.k_position;
    j["k_direction"] = a.k_direction;
    j["input_kind"] = a.input_kind == FieldInput::euclidean_3d ? "euclidean_3d" : "inverted_sphere_4d";
    return j;
}

FieldArchitecture arch_from_json(const json& j) {
    FieldArchitecture a;
    const std::string variant = j.at("variant");
    if (variant == "nerf_asymmetric") a.variant = FieldVariant::nerf_asymmetric;
    else if (variant == "vanilla_symmetric") a.variant = FieldVariant::vanilla_symmetric;
    else throw CheckpointError("unknown variant: " + variant);
    a.trunk_depth = j.at("trunk_depth");
    a.trunk_width = j.at("trunk_width");
    a.skip_layers.clear();
    for (int s : j.at("skip_layers")) a.skip_layers.insert(s);
    a.view_branch_depth = j.at("view_branch_depth");
    a.view_branch_width = j.at("view_branch_width");
    a.k_position = j.at("k_position");
    a.k_direction = j.at("k_direction");
    const std::string kind = j.at("input_kind");
    if (kind == "euclidean_3d") a.input_kind = FieldInput::euclidean_3d;
    else if (kind == "inverted_sphere_4d") a.input_kind = FieldInput::inverted_sphere_4d;
    else throw CheckpointError("unknown input_kind: " + kind);
    return a;
}

json frozen_to_json(const FrozenOpacity& f) {
    json j;
    switch (f.kind) {
        case FrozenOpacity::Kind::constant: j["kind"] = "constant"; break;
        case FrozenOpacity::Kind::ball: j["kind"] = "ball"; break;
        case FrozenOpacity::Kind::shell: j["kind"] = "shell"; break;
    }
    j["density"] = f.density;
    j["radius"] = f.radius;
    j["thickness"] = f.thickness;
    return j;
}

FrozenOpacity frozen_from_json(const json& j) {
    FrozenOpacity f;
    const std::string kind = j.at("kind");
    if (kind == "constant") f.kind = FrozenOpacity::Kind::constant;
    else if (kind == "ball") f.kind = FrozenOpacity::Kind::ball;
    else if (kind == "shell") f.kind = FrozenOpacity::Kind::shell;
    else throw CheckpointError("unknown frozen opacity kind: " + kind);
    f.density = j.at("density");
    f.radius = j.at("radius");
    f.thickness = j.at("thickness");
    return f;
}

constexpr char kCheckpointMagic[] = "VOLRAYCKPT1\n";

}  // namespace

// Frequencies double each octave, so sin/cos at 2^f x follow from 2^(f-1) x
// by the double-angle identities; only the base frequency calls libm.
// Accumulated rounding stays near machine precision for k <= 12; a final
// clamp keeps every feature inside [-1, 1].

std::vector<double> positional_encode(std::span<const double> p, int k) {
    const int dim = static_cast<int>(p.size());
    std::vector<double> out(static_cast<std::size_t>(2 * (k + 1) * dim));
    std::vector<double> s(static_cast<std::size_t>(dim)), c(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i) {
        s[static_cast<std::size_t>(i)] = std::sin(p[static_cast<std::size_t>(i)]);
        c[static_cast<std::size_t>(i)] = std::cos(p[static_cast<std::size_t>(i)]);
    }
    std::size_t at = 0;
    for (int f = 0; f <= k; ++f) {
        if (f > 0) {
            for (int i = 0; i < dim; ++i) {
                const double si = s[static_cast<std::size_t>(i)];
                const double ci = c[static_cast<std::size_t>(i)];
                s[static_cast<std::size_t>(i)] = 2.0 * si * ci;
                c[static_cast<std::size_t>(i)] = 1.0 - 2.0 * si * si;
            }
        }
        for (int i = 0; i < dim; ++i)
            out[at++] = std::clamp(s[static_cast<std::size_t>(i)], -1.0, 1.0);
        for (int i = 0; i < dim; ++i)
            out[at++] = std::clamp(c[static_cast<std::size_t>(i)], -1.0, 1.0);
    }
    return out;
}

Eigen::MatrixXd encode_batch(const Eigen::MatrixXd& p, int k) {
    const Index dim = p.rows();
    MatrixXd out(2 * (k + 1) * dim, p.cols());
    MatrixXd s(dim, p.cols()), c(dim, p.cols());
    for (Index j = 0; j < p.cols(); ++j)
        for (Index i = 0; i < dim; ++i) {
            s(i, j) = std::sin(p(i, j));
            c(i, j) = std::cos(p(i, j));
        }
    for (int f = 0; f <= k; ++f) {
        if (f > 0) {
            const MatrixXd s_prev = s;
            s.array() = 2.0 * s_prev.array() * c.array();
            c.array() = 1.0 - 2.0 * s_prev.array() * s_prev.array();
        }
        out.middleRows(2 * f * dim, dim) = s.array().min(1.0).max(-1.0);
        out.middleRows((2 * f + 1) * dim, dim) = c.array().min(1.0).max(-1.0);
    }
    return out;
}

void FieldArchitecture::validate() const {
    if (trunk_depth < 1 || trunk_width < 1)
        throw InvalidArchitecture("trunk depth and width must be positive");
    if (k_position < 0 || k_direction < 0)
        throw InvalidArchitecture("encoding orders must be non-negative");
    for (int s : skip_layers)
        if (s < 1 || s >= trunk_depth)
            throw InvalidArchitecture("skip layer index out of range");
    if (variant == FieldVariant::nerf_asymmetric) {
        if (view_branch_depth < 1 || view_branch_width < 1)
            throw InvalidArchitecture("asymmetric variant needs a view branch");
    } else {
        if (view_branch_depth != 0)
            throw InvalidArchitecture("vanilla variant concatenates at layer 0; view branch must be empty");
    }
}

FieldArchitecture nerf_mlp_architecture(FieldInput kind) {
    FieldArchitecture a;
    a.input_kind = kind;
    return a;
}

FieldArchitecture vanilla_mlp_architecture(FieldInput kind) {
    FieldArchitecture a;
    a.variant = FieldVariant::vanilla_symmetric;
    a.view_branch_depth = 0;
    a.view_branch_width = 0;
    a.k_direction = a.k_position;  // direction encoded like position
    a.input_kind = kind;
    return a;
}

double FrozenOpacity::density_at_radius(double r) const {
    switch (kind) {
        case Kind::constant: return density;
        case Kind::ball: return r <= radius ? density : 0.0;
        case Kind::shell: return std::abs(r - radius) <= 0.5 * thickness ? density : 0.0;
    }
    return 0.0;
}

double FrozenOpacity::density_at(std::span<const double> position, FieldInput input_kind) const {
    if (kind == Kind::constant) return density;
    double r;
    if (input_kind == FieldInput::euclidean_3d) {
        r = std::sqrt(position[0] * position[0] + position[1] * position[1] +
                      position[2] * position[2]);
    } else {
        r = position[3] > 0.0 ? 1.0 / position[3] : std::numeric_limits<double>::infinity();
    }
    return density_at_radius(r);
}

const Eigen::MatrixXd& FieldModel::param(const std::string& name) const {
    return params[static_cast<std::size_t>(param_index(*this, name))].value;
}

Eigen::MatrixXd& FieldModel::param(const std::string& name) {
    return params[static_cast<std::size_t>(param_index(*this, name))].value;
}

GradientSet& GradientSet::operator+=(const GradientSet& other) {
    if (grads.size() != other.grads.size()) throw ShapeMismatch("gradient set size mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += other.grads[i];
    return *this;
}

void GradientSet::scale(double s) {
    for (auto& g : grads) g *= s;
}

FieldModel init_field(const FieldArchitecture& arch, std::uint64_t seed) {
    arch.validate();
    FieldModel m;
    m.arch = arch;
    Rng rng = Rng::derive(seed, {0x696e6974ULL});
    for (const LinearSpec& l : layer_plan(arch)) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
        MatrixXd w(l.out, l.in);
        for (Index j = 0; j < w.cols(); ++j)
            for (Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-bound, bound);
        m.params.push_back({l.name + ".weight", std::move(w)});
        m.params.push_back({l.name + ".bias", MatrixXd::Zero(l.out, 1)});
    }
    return m;
}

ForwardTrace field_forward_batch(const FieldModel& model, const Eigen::MatrixXd& positions,
                                 const Eigen::MatrixXd& directions) {
    const FieldArchitecture& a = model.arch;
    if (positions.rows() != a.position_dim())
        throw ShapeMismatch("position rows " + std::to_string(positions.rows()) + " != " +
                            std::to_string(a.position_dim()));
    if (directions.rows() != 3) throw ShapeMismatch("direction rows must be 3");
    if (positions.cols() != directions.cols())
        throw ShapeMismatch("position/direction batch mismatch");

    const Index s = positions.cols();
    ForwardTrace t;
    t.arch = a;
    t.frozen_sigma = model.frozen_opacity.has_value();
    const MatrixXd enc_pos = encode_batch(positions, a.k_position);
    const MatrixXd enc_dir = encode_batch(directions, a.k_direction);

    if (t.frozen_sigma) {
        t.sigma.resize(s);
        for (Index i = 0; i < s; ++i) {
            std::span<const double> col(positions.col(i).data(),
                                        static_cast<std::size_t>(positions.rows()));
            t.sigma(i) = model.frozen_opacity->density_at(col, a.input_kind);
        }
    }

    auto run_trunk = [&](const std::string& prefix, const MatrixXd& base,
                         std::vector<MatrixXd>& inputs, MatrixXd& out) {
        inputs.reserve(static_cast<std::size_t>(a.trunk_depth));
        MatrixXd h;
        for (int i = 0; i < a.trunk_depth; ++i) {
            if (i == 0) {
                inputs.push_back(base);
            } else if (a.skip_layers.count(i)) {
                inputs.push_back(vstack(h, base));
            } else {
                inputs.push_back(std::move(h));
            }
            h = linear(model, prefix + std::to_string(i), inputs.back()).cwiseMax(0.0);
        }
        out = std::move(h);
    };

    if (a.variant == FieldVariant::nerf_asymmetric) {
        run_trunk("trunk", enc_pos, t.trunk_inputs, t.trunk_out);
        if (!t.frozen_sigma) {
            t.sigma_pre = linear(model, "sigma_head", t.trunk_out);
            t.sigma = softplus_row(t.sigma_pre).matrix();
        }
        MatrixXd feature = linear(model, "feature", t.trunk_out);
        t.view_inputs.reserve(static_cast<std::size_t>(a.view_branch_depth));
        MatrixXd v = vstack(feature, enc_dir);
        for (int j = 0; j < a.view_branch_depth; ++j) {
            t.view_inputs.push_back(std::move(v));
            v = linear(model, "view" + std::to_string(j), t.view_inputs.back()).cwiseMax(0.0);
        }
        t.view_out = std::move(v);
        t.color = sigmoid(linear(model, "rgb_head", t.view_out));
    } else {
        if (!t.frozen_sigma) {
            run_trunk("sigma_trunk", enc_pos, t.trunk_inputs, t.trunk_out);
            t.sigma_pre = linear(model, "sigma_head", t.trunk_out);
            t.sigma = softplus_row(t.sigma_pre).matrix();
        }
        run_trunk("color_trunk", vstack(enc_pos, enc_dir), t.color_inputs, t.color_out);
        t.color = sigmoid(linear(model, "rgb_head", t.color_out));
    }
    return t;
}

void field_backward_batch(const FieldModel& model, const ForwardTrace& trace,
                          const Eigen::VectorXd& d_sigma, const Eigen::MatrixXd& d_color,
                          GradientSet& accum) {
    const FieldArchitecture& a = model.arch;
    if (!(trace.arch == a)) throw TraceMismatch("trace produced by a different architecture");
    if (trace.frozen_sigma != model.frozen_opacity.has_value())
        throw TraceMismatch("trace frozen-opacity state does not match model");
    const Index s = trace.batch();
    if (d_sigma.size() != s || d_color.rows() != 3 || d_color.cols() != s)
        throw ShapeMismatch("cotangent shapes do not match trace batch");
    if (accum.grads.size() != model.params.size())
        throw ShapeMismatch("gradient accumulator does not match model");

    // d/d(rgb preactivation) through the sigmoid.
    const MatrixXd d_rgb =
        (d_color.array() * trace.color.array() * (1.0 - trace.color.array())).matrix();

    // Walks a trunk from its last layer to layer 0. The post-activation of
    // layer i is the next layer's stored input (top rows under a skip).
    auto trunk_backward = [&](const std::string& prefix, const std::vector<MatrixXd>& inputs,
                              const MatrixXd& final_out, MatrixXd g_h) {
        for (int i = a.trunk_depth - 1; i >= 0; --i) {
            const MatrixXd& out =
                i == a.trunk_depth - 1 ? final_out : inputs[static_cast<std::size_t>(i + 1)];
            const MatrixXd d_pre = relu_mask(out.topRows(a.trunk_width), g_h);
            linear_backward(model, accum, prefix + std::to_string(i), d_pre,
                            inputs[static_cast<std::size_t>(i)]);
            if (i > 0)
                g_h = propagate(model, prefix + std::to_string(i), d_pre).topRows(a.trunk_width);
        }
    };

    if (a.variant == FieldVariant::nerf_asymmetric) {
        linear_backward(model, accum, "rgb_head", d_rgb, trace.view_out);
        MatrixXd g = propagate(model, "rgb_head", d_rgb);
        for (int j = a.view_branch_depth - 1; j >= 0; --j) {
            const MatrixXd& out =
                j == a.view_branch_depth - 1 ? trace.view_out
                                             : trace.view_inputs[static_cast<std::size_t>(j + 1)];
            const MatrixXd d_pre = relu_mask(out, g);
            linear_backward(model, accum, "view" + std::to_string(j), d_pre,
                            trace.view_inputs[static_cast<std::size_t>(j)]);
            g = propagate(model, "view" + std::to_string(j), d_pre);
        }
        // The encoded-direction rows of the view input are network inputs,
        // not parameters; only the feature rows carry gradient onward.
        MatrixXd g_feature = g.topRows(a.trunk_width);
        linear_backward(model, accum, "feature", g_feature, trace.trunk_out);
        MatrixXd g_h = propagate(model, "feature", g_feature);

        if (!trace.frozen_sigma) {
            MatrixXd d_sigma_pre(1, s);
            for (Index i = 0; i < s; ++i)
                d_sigma_pre(0, i) = d_sigma(i) * sigmoid_scalar(trace.sigma_pre(0, i));
            linear_backward(model, accum, "sigma_head", d_sigma_pre, trace.trunk_out);
            g_h.noalias() += propagate(model, "sigma_head", d_sigma_pre);
        }
        trunk_backward("trunk", trace.trunk_inputs, trace.trunk_out, std::move(g_h));
    } else {
        linear_backward(model, accum, "rgb_head", d_rgb, trace.color_out);
        MatrixXd g_h = propagate(model, "rgb_head", d_rgb);
        trunk_backward("color_trunk", trace.color_inputs, trace.color_out, std::move(g_h));
        if (!trace.frozen_sigma) {
            MatrixXd d_sigma_pre(1, s);
            for (Index i = 0; i < s; ++i)
                d_sigma_pre(0, i) = d_sigma(i) * sigmoid_scalar(trace.sigma_pre(0, i));
            linear_backward(model, accum, "sigma_head", d_sigma_pre, trace.trunk_out);
            MatrixXd g_s = propagate(model, "sigma_head", d_sigma_pre);
            trunk_backward("sigma_trunk", trace.trunk_inputs, trace.trunk_out, std::move(g_s));
        }
    }
}

FieldEval field_forward(const FieldModel& model, std::span<const double> position,
                        const Vec3& direction) {
    MatrixXd pos(static_cast<Index>(position.size()), 1);
    for (Index i = 0; i < pos.rows(); ++i) pos(i, 0) = position[static_cast<std::size_t>(i)];
    MatrixXd dir(3, 1);
    dir << direction.x, direction.y, direction.z;
    ForwardTrace t = field_forward_batch(model, pos, dir);
    FieldEval e;
    e.sigma = t.sigma(0);
    e.color = {t.color(0, 0), t.color(1, 0), t.color(2, 0)};
    e.trace = std::move(t);
    return e;
}

GradientSet field_backward(const FieldModel& model, const ForwardTrace& trace, double d_sigma,
                           const Vec3& d_color) {
    VectorXd ds(1);
    ds << d_sigma;
    MatrixXd dc(3, 1);
    dc << d_color.x, d_color.y, d_color.z;
    GradientSet g = zero_gradients(model);
    field_backward_batch(model, trace, ds, dc, g);
    return g;
}

GradientSet zero_gradients(const FieldModel& model) {
    GradientSet g;
    g.grads.reserve(model.params.size());
    for (const Parameter& p : model.params)
        g.grads.push_back(MatrixXd::Zero(p.value.rows(), p.value.cols()));
    return g;
}

AdamState make_adam_state(const FieldModel& model) {
    AdamState s;
    s.m.reserve(model.params.size());
    s.v.reserve(model.params.size());
    for (const Parameter& p : model.params) {
        s.m.push_back(MatrixXd::Zero(p.value.rows(), p.value.cols()));
        s.v.push_back(MatrixXd::Zero(p.value.rows(), p.value.cols()));
    }
    return s;
}

void adam_step(FieldModel& model, const GradientSet& grads, AdamState& state, double lr) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    if (grads.grads.size() != model.params.size() || state.m.size() != model.params.size())
        throw ShapeMismatch("adam_step: gradient/state arrays do not match model");
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        if (grads.grads[i].rows() != model.params[i].value.rows() ||
            grads.grads[i].cols() != model.params[i].value.cols())
            throw ShapeMismatch("adam_step: gradient shape mismatch at " + model.params[i].name);
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const MatrixXd& g = grads.grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g.cwiseProduct(g);
        const MatrixXd m_hat = state.m[i] / bc1;
        const MatrixXd v_hat = state.v[i] / bc2;
        model.params[i].value.array() -=
            lr * m_hat.array() / (v_hat.array().sqrt() + eps);
    }
}

std::string architecture_to_json_string(const FieldArchitecture& arch) {
    return arch_to_json(arch).dump();
}

FieldArchitecture architecture_from_json_string(const std::string& text) {
    return arch_from_json(json::parse(text));
}

std::string frozen_opacity_to_json_string(const FrozenOpacity& frozen) {
    return frozen_to_json(frozen).dump();
}

FrozenOpacity frozen_opacity_from_json_string(const std::string& text) {
    return frozen_from_json(json::parse(text));
}

void save_checkpoint(const FieldModel& model, const std::string& path, std::uint64_t seed,
                     long iteration) {
    json header;
    header["format"] = "volray-checkpoint";
    header["version"] = 1;
    header["seed"] = seed;
    header["iteration"] = iteration;
    header["arch"] = arch_to_json(model.arch);
    header["frozen_opacity"] = model.frozen_opacity ? frozen_to_json(*model.frozen_opacity)
                                                    : json(nullptr);
    json table = json::array();
    for (const Parameter& p : model.params)
        table.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    header["params"] = table;
    header["layout"] = "column-major";

    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open " + path + " for writing");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
    const std::string hdr = header.dump();
    const std::uint64_t len = hdr.size();
    char len_bytes[8];
    for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<char>((len >> (8 * i)) & 0xff);
    out.write(len_bytes, 8);
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    for (const Parameter& p : model.params)
        out.write(reinterpret_cast<const char*>(p.value.data()),
                  static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.value.size())));
    if (!out) throw CheckpointError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path);
    char magic[sizeof(kCheckpointMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw CheckpointError(path + " is not a checkpoint file");
    char len_bytes[8];
    in.read(len_bytes, 8);
    if (!in) throw CheckpointError("truncated header in " + path);
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i)
        len |= static_cast<std::uint64_t>(static_cast<unsigned char>(len_bytes[i])) << (8 * i);
    if (len > (1ULL << 24)) throw CheckpointError("unreasonable header size in " + path);
    std::string hdr(len, '\0');
    in.read(hdr.data(), static_cast<std::streamsize>(len));
    if (!in) throw CheckpointError("truncated header in " + path);

    json header;
    try {
        header = json::parse(hdr);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
    }
    if (header.value("format", "") != "volray-checkpoint" || header.value("version", 0) != 1)
        throw CheckpointError("unsupported checkpoint format/version in " + path);

    Checkpoint ck;
    ck.seed = header.at("seed");
    ck.iteration = header.at("iteration");
    ck.model.arch = arch_from_json(header.at("arch"));
    ck.model.arch.validate();
    if (!header.at("frozen_opacity").is_null())
        ck.model.frozen_opacity = frozen_from_json(header.at("frozen_opacity"));

    const auto plan = layer_plan(ck.model.arch);
    const json& table = header.at("params");
    if (table.size() != plan.size() * 2)
        throw CheckpointError("parameter table does not match architecture");
    std::size_t entry = 0;
    for (const LinearSpec& l : plan) {
        for (const char* suffix : {".weight", ".bias"}) {
            const json& row = table[entry++];
            const std::string expect = l.name + suffix;
            if (row.at("name") != expect) throw CheckpointError("unexpected parameter " + std::string(row.at("name")));
            const Index rows = row.at("rows");
            const Index cols = row.at("cols");
            const Index want_rows = l.out;
            const Index want_cols = std::string(suffix) == ".weight" ? l.in : 1;
            if (rows != want_rows || cols != want_cols)
                throw CheckpointError("parameter shape mismatch for " + expect);
            MatrixXd value(rows, cols);
            in.read(reinterpret_cast<char*>(value.data()),
                    static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(value.size())));
            if (!in) throw CheckpointError("truncated parameter data in " + path);
            if (!value.allFinite()) throw CheckpointError("non-finite parameter values in " + path);
            ck.model.params.push_back({expect, std::move(value)});
        }
    }
    return ck;
}

}  // namespace volray
