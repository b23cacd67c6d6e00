#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <vector>

#include "volray/field.hpp"
#include "volray/geometry.hpp"
#include "volray/image.hpp"
#include "volray/rng.hpp"
#include "volray/scene.hpp"

namespace volray {

struct EmptyInterval : std::runtime_error {
    EmptyInterval() : std::runtime_error("sampling interval is empty") {}
};
struct LengthMismatch : std::runtime_error {
    explicit LengthMismatch(const std::string& what) : std::runtime_error(what) {}
};
struct DegenerateBins : std::runtime_error {
    explicit DegenerateBins(const std::string& what) : std::runtime_error(what) {}
};

/// Batched field evaluation: positions (position_dim x S), directions
/// (3 x S) -> densities (S) and colors (3 x S). Lets tests render from
/// closed-form fields through the same code path as trained models.
struct FieldSamples {
    Eigen::VectorXd sigma;
    Eigen::MatrixXd color;
};
struct BatchedField {
    int position_dim = 3;
    std::function<FieldSamples(const Eigen::MatrixXd&, const Eigen::MatrixXd&)> eval;
};

/// Adapter running a FieldModel without keeping the forward trace.
BatchedField batched_field(const FieldModel& model);

/// n samples in (t_near, t_far): bin midpoints of n equal bins, or one
/// uniform draw per bin when jittered. Throws EmptyInterval if
/// t_near >= t_far.
std::vector<double> sample_segment(double t_near, double t_far, int n, bool jitter, Rng& rng);

/// Per-sample integration measure: widths of the cells that the sorted
/// samples induce on [t_near, t_far] (cell boundaries halfway between
/// neighbours, end cells closed by the segment bounds). For unjittered
/// sample_segment output every delta equals the bin width.
std::vector<double> segment_deltas(const std::vector<double>& t_values, double t_near,
                                   double t_far);

/// alpha_i = 1 - exp(-sigma_i delta_i), T_i = incoming_T prod_{j<i}(1-alpha_j),
/// weight_i = T_i alpha_i.
struct QuadratureWeights {
    Eigen::VectorXd alphas, transmittances, weights;
    double final_transmittance = 1.0;
};
QuadratureWeights quadrature_weights(const Eigen::VectorXd& sigmas,
                                     const Eigen::VectorXd& deltas, double incoming_T);

/// Ordered samples along one ray segment with everything the compositing
/// produced. For the outer volume, t_values hold 1 - 1/r (ascending equals
/// front to back) and deltas are measured in inverse radius.
struct RayQuadrature {
    std::vector<double> t_values;
    std::vector<double> deltas;
    Eigen::VectorXd sigmas;
    Eigen::MatrixXd colors;  // 3 x n
    QuadratureWeights comp;
};

/// Composite of one ray. color = fg_color + residual_transmittance * bg_color
/// holds exactly as written; bounded renders have bg_color = 0.
struct RenderOutput {
    Vec3 color;
    double residual_transmittance = 1.0;
    Vec3 fg_color, bg_color;
};

/// Single-volume quadrature of the rendering integral over t in
/// (t_near, t_far), midpoint samples.
RenderOutput render_ray_bounded(const BatchedField& field, const Ray& ray, double t_near,
                                double t_far, int n, RayQuadrature* detail = nullptr);
RenderOutput render_ray_bounded(const FieldModel& field, const Ray& ray, double t_near,
                                double t_far, int n);

/// Two-volume composite: term (i) inner quadrature over (0, t'), term (ii)
/// the residual transmittance at t', term (iii) outer quadrature in inverse
/// radius over (0, 1], front to back from the sphere outward.
RenderOutput render_ray_nerfpp(const BatchedField& fg, const BatchedField& bg, const Ray& ray,
                               int n_fg, int n_bg, RayQuadrature* fg_detail = nullptr,
                               RayQuadrature* bg_detail = nullptr);
RenderOutput render_ray_nerfpp(const FieldModel& fg, const FieldModel& bg, const Ray& ray,
                               int n_fg, int n_bg);

/// Inverse-CDF draws from the piecewise-constant density proportional to
/// (coarse_weights + 1e-5) on the given bins; output ascending.
std::vector<double> importance_sample(const std::vector<double>& bin_edges,
                                      const std::vector<double>& coarse_weights, int n, Rng& rng);

/// Inverted-sphere network inputs for outer samples. s_values are ascending
/// 1 - 1/r; row 3 of positions carries 1/r.
Eigen::MatrixXd outer_sample_positions(const Ray& ray, const SphereCrossing& crossing,
                                       const std::vector<double>& s_values);

/// Fine-pass sample set: union of the coarse samples and n_fine importance
/// draws from the coarse weights on the coarse bins.
std::vector<double> hierarchical_samples(const std::vector<double>& coarse_t,
                                         const QuadratureWeights& coarse, double t_near,
                                         double t_far, int n_fine, Rng& rng);

/// Model sets and knobs for whole-image rendering. fine pointers may equal
/// the coarse ones (shared nets) or be null to render single-pass.
struct FieldSet {
    const FieldModel* fg_coarse = nullptr;
    const FieldModel* fg_fine = nullptr;
    const FieldModel* bg_coarse = nullptr;
    const FieldModel* bg_fine = nullptr;

    bool nerfpp() const { return bg_coarse != nullptr; }
};
struct RenderConfig {
    int n_coarse = 128;
    int n_fine = 256;  // 0 disables the fine pass
    double t_near = 1e-3, t_far = 2.0;  // bounded mode only
    bool jitter = false;
    std::uint64_t seed = 0;
};

RenderOutput render_pixel(const FieldSet& fields, const RenderConfig& config, const Ray& ray,
                          Rng& rng);

/// Row-major RGB buffer; rays through pixel centers; deterministic when
/// jitter is disabled.
Image render_image(const Camera& camera, const RenderConfig& config, const FieldSet& fields);

}  // namespace volray
