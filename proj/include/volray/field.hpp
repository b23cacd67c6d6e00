#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "volray/vec3.hpp"

namespace volray {

struct InvalidArchitecture : std::runtime_error {
    explicit InvalidArchitecture(const std::string& what) : std::runtime_error(what) {}
};
struct ShapeMismatch : std::runtime_error {
    explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};
struct TraceMismatch : std::runtime_error {
    explicit TraceMismatch(const std::string& what) : std::runtime_error(what) {}
};
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

/// Fourier feature map: frequencies 2^0 .. 2^k, sin and cos of each.
struct EncodingSpec {
    int k = 0;
    int input_dim = 1;
    int output_dim() const { return 2 * (k + 1) * input_dim; }
};

/// (sin 2^0 p, cos 2^0 p, ..., sin 2^k p, cos 2^k p), componentwise per
/// frequency. Output length 2*(k+1)*dim(p), every entry in [-1, 1].
std::vector<double> positional_encode(std::span<const double> p, int k);

/// Batched encoding: columns are samples. (dim x S) -> (2*(k+1)*dim x S).
Eigen::MatrixXd encode_batch(const Eigen::MatrixXd& p, int k);

enum class FieldVariant { nerf_asymmetric, vanilla_symmetric };
enum class FieldInput { euclidean_3d, inverted_sphere_4d };

/// Network shape for one radiance field.
///
/// nerf_asymmetric: trunk over encoded position -> density head + feature;
/// encoded direction joins only at the view branch, after the density head.
/// vanilla_symmetric: the density net keeps the trunk-over-position shape,
/// while the color net takes position and direction features concatenated at
/// layer 0 (view_branch_depth must be 0).
struct FieldArchitecture {
    FieldVariant variant = FieldVariant::nerf_asymmetric;
    int trunk_depth = 4;
    int trunk_width = 64;
    std::set<int> skip_layers = {2};
    int view_branch_depth = 1;
    int view_branch_width = 32;
    int k_position = 10;
    int k_direction = 4;
    FieldInput input_kind = FieldInput::euclidean_3d;

    int position_dim() const { return input_kind == FieldInput::euclidean_3d ? 3 : 4; }
    int encoded_position_dim() const { return 2 * (k_position + 1) * position_dim(); }
    int encoded_direction_dim() const { return 2 * (k_direction + 1) * 3; }

    void validate() const;  // throws InvalidArchitecture
    bool operator==(const FieldArchitecture&) const = default;
};

/// Desk-scale default architectures.
FieldArchitecture nerf_mlp_architecture(FieldInput kind);
FieldArchitecture vanilla_mlp_architecture(FieldInput kind);

/// Analytic density override. When set on a model, sigma is taken from this
/// radial profile instead of the density head and receives no gradients.
struct FrozenOpacity {
    enum class Kind { constant, ball, shell };
    Kind kind = Kind::constant;
    double density = 0.0;
    double radius = 1.0;
    double thickness = 0.1;

    double density_at_radius(double r) const;
    /// position is Euclidean (3) or (x', y', z', 1/r) (4), per input kind.
    double density_at(std::span<const double> position, FieldInput input_kind) const;

    bool operator==(const FrozenOpacity&) const = default;
};

struct Parameter {
    std::string name;
    Eigen::MatrixXd value;
};

/// One radiance field: architecture plus named parameter arrays. Parameter
/// order is fixed by the architecture and defines the checkpoint layout.
struct FieldModel {
    FieldArchitecture arch;
    std::vector<Parameter> params;
    std::optional<FrozenOpacity> frozen_opacity;

    const Eigen::MatrixXd& param(const std::string& name) const;
    Eigen::MatrixXd& param(const std::string& name);
};

/// Per-parameter gradients, shape-parallel to FieldModel::params.
struct GradientSet {
    std::vector<Eigen::MatrixXd> grads;

    GradientSet& operator+=(const GradientSet& other);
    void scale(double s);
};

/// Adam moments (beta1 0.9, beta2 0.999, eps 1e-8).
struct AdamState {
    std::vector<Eigen::MatrixXd> m, v;
    long step = 0;
};

/// Forward record for a batch of S samples: the input of every linear layer
/// (with any skip concatenation already applied) plus head preactivations —
/// everything field_backward_batch needs to reach exact parameter gradients.
struct ForwardTrace {
    FieldArchitecture arch;
    std::vector<Eigen::MatrixXd> trunk_inputs;  // density-path layer inputs
    Eigen::MatrixXd trunk_out;                  // final trunk activation
    Eigen::MatrixXd sigma_pre;                  // 1 x S (empty when frozen)
    std::vector<Eigen::MatrixXd> view_inputs;   // asymmetric: view branch layer inputs
    Eigen::MatrixXd view_out;                   // asymmetric: final view activation
    std::vector<Eigen::MatrixXd> color_inputs;  // vanilla: color trunk layer inputs
    Eigen::MatrixXd color_out;                  // vanilla: final color activation
    bool frozen_sigma = false;

    Eigen::VectorXd sigma;  // S, softplus or frozen override
    Eigen::MatrixXd color;  // 3 x S, sigmoid

    Eigen::Index batch() const { return color.cols(); }
};

/// Deterministic initialization: fan-in-scaled uniform weights, zero biases.
FieldModel init_field(const FieldArchitecture& arch, std::uint64_t seed);

/// Batched forward: positions (position_dim x S), directions (3 x S, unit).
ForwardTrace field_forward_batch(const FieldModel& model, const Eigen::MatrixXd& positions,
                                 const Eigen::MatrixXd& directions);

/// Accumulates d(d_sigma . sigma + d_color . color)/d(theta) into accum.
void field_backward_batch(const FieldModel& model, const ForwardTrace& trace,
                          const Eigen::VectorXd& d_sigma, const Eigen::MatrixXd& d_color,
                          GradientSet& accum);

/// Single-sample wrappers around the batched path.
struct FieldEval {
    double sigma = 0.0;
    Vec3 color;
    ForwardTrace trace;
};
FieldEval field_forward(const FieldModel& model, std::span<const double> position,
                        const Vec3& direction);
GradientSet field_backward(const FieldModel& model, const ForwardTrace& trace, double d_sigma,
                           const Vec3& d_color);

GradientSet zero_gradients(const FieldModel& model);
AdamState make_adam_state(const FieldModel& model);
void adam_step(FieldModel& model, const GradientSet& grads, AdamState& state, double lr);

/// JSON round trips for persisting run configurations.
std::string architecture_to_json_string(const FieldArchitecture& arch);
FieldArchitecture architecture_from_json_string(const std::string& text);
std::string frozen_opacity_to_json_string(const FrozenOpacity& frozen);
FrozenOpacity frozen_opacity_from_json_string(const std::string& text);

/// Checkpoint container: magic, versioned JSON header (architecture, seed,
/// iteration, parameter table), then raw little-endian f64 parameter arrays
/// in declaration order.
void save_checkpoint(const FieldModel& model, const std::string& path, std::uint64_t seed,
                     long iteration);
struct Checkpoint {
    FieldModel model;
    std::uint64_t seed = 0;
    long iteration = 0;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace volray
