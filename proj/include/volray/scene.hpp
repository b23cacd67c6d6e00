#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "volray/geometry.hpp"
#include "volray/image.hpp"
#include "volray/vec3.hpp"

namespace volray {

struct OutOfBounds : std::runtime_error {
    OutOfBounds() : std::runtime_error("pixel outside image bounds") {}
};
struct MalformedManifest : std::runtime_error {
    explicit MalformedManifest(const std::string& what) : std::runtime_error(what) {}
};
struct MissingImage : std::runtime_error {
    explicit MissingImage(const std::string& what) : std::runtime_error(what) {}
};
struct NonOrthonormalRotation : std::runtime_error {
    NonOrthonormalRotation() : std::runtime_error("camera rotation is not a proper rotation (tolerance 1e-6)") {}
};

/// Pinhole camera: intrinsics in pixels, camera-to-world rotation whose third
/// column is the viewing direction, position in scene units.
struct Camera {
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    Mat3 rotation;
    Vec3 position;
    int width = 0, height = 0;

    /// Throws NonOrthonormalRotation unless rotation is orthonormal with
    /// determinant +1 within tol.
    void validate(double tol = 1e-6) const;
};

/// Ray through a (sub)pixel: origin at the camera,
/// direction = normalize(R * ((px-cx)/fx, (py-cy)/fy, 1)).
Ray generate_ray(const Camera& camera, double px, double py);

/// n cameras uniformly positioned on the upper (z >= 0) hemisphere of the
/// given radius around look_at, all aimed at look_at with world up (0,0,1).
std::vector<Camera> hemisphere_cameras(int n, double radius, const Vec3& look_at,
                                       std::uint64_t seed, int width = 64, int height = 64,
                                       double fov_degrees = 40.0);

/// Analytic volume primitive with a soft density falloff band at the surface
/// so the fields stay smooth enough for high-order quadrature.
struct Primitive {
    enum class Shape { sphere, box, shell };
    enum class Material { lambertian, phong, emissive };

    Shape shape = Shape::sphere;
    Vec3 center;
    double radius = 0.5;        // sphere/shell
    double thickness = 0.1;     // shell band width
    Vec3 half_extents{0.5, 0.5, 0.5};  // box
    double density = 20.0;
    Vec3 albedo{0.8, 0.8, 0.8};
    Material material = Material::lambertian;
    double phong_exponent = 32.0;
    double phong_strength = 0.5;
    double softness = 0.05;     // falloff band width
    double texture_frequency = 0.0;  // sinusoidal albedo modulation, 0 = off

    double density_at(const Vec3& p) const;
    Vec3 surface_normal(const Vec3& p) const;
};

/// Smooth angular emission pattern for the far shell.
struct EnvironmentShell {
    double radius = 100.0;
    double thickness = 4.0;
    double density = 12.0;
    double pattern_frequency = 3.0;

    double density_at_radius(double r) const;
    Vec3 emission(const Vec3& direction_from_origin) const;
};

/// Scene with closed-form opacity and radiance; the ground-truth oracle for
/// every experiment.
struct SyntheticScene {
    std::vector<Primitive> primitives;
    std::optional<EnvironmentShell> environment;
    Vec3 light_direction{-0.5, -0.3, -0.8};  // directional light, normalized at use
    double ambient = 0.35;

    double density_at(const Vec3& p) const;
    /// Density-weighted blend of the primitives' shaded colors at p.
    Vec3 radiance_at(const Vec3& p, const Vec3& view_direction) const;
    /// Depth beyond which density is identically zero along any ray from
    /// within max_camera_distance of the origin.
    double far_bound(double max_camera_distance) const;
};

/// Named desk-scale scenes used by the command-line experiments.
///   "glossy"    bounded scene: specular + matte objects near the origin.
///   "unbounded" foreground near the cameras, mid-distance objects, far
///               emissive shell.
///   "smoke"     tiny single-sphere scene for fast tests.
SyntheticScene preset_scene(const std::string& name);
bool is_preset_scene(const std::string& name);

/// Scene mapped through (p - center) * scale. Densities scale by 1/scale so
/// optical depth along corresponding rays is preserved; rendered images are
/// identical when cameras are mapped through the same transform.
SyntheticScene transform_scene(const SyntheticScene& scene, const SimilarityTransform& t);

/// Camera with position mapped through the transform (rotation/intrinsics
/// unchanged).
Camera transform_camera(const Camera& camera, const SimilarityTransform& t);

/// Dense quadrature of the analytic fields along each camera ray. This path
/// is independent of the renderer in render.hpp; it is the reference the
/// renderer is tested against, and the source of training images.
Image oracle_render(const SyntheticScene& scene, const Camera& camera, int n_samples);

/// Single-ray version of oracle_render.
Vec3 oracle_render_ray(const SyntheticScene& scene, const Ray& ray, double t_near, double t_far,
                       int n_samples);

enum class Split { train, test };

struct PosedDataset {
    std::vector<Camera> cameras;
    std::vector<Image> images;
    std::vector<Split> splits;

    std::vector<std::size_t> indices_of(Split s) const;
};

/// Directory layout: manifest.json plus one 8-bit PNG per view. Round trips
/// are exact on poses and 8-bit-exact on images.
void save_dataset(const PosedDataset& dataset, const std::string& path);
PosedDataset load_dataset(const std::string& path);

}  // namespace volray
