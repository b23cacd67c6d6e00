#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "volray/vec3.hpp"

namespace volray {

/// Ray r(t) = origin + t * direction with |direction| = 1.
struct Ray {
    Vec3 origin;
    Vec3 direction;

    Vec3 at(double t) const { return origin + direction * t; }
};

/// Point outside the unit sphere expressed as a unit direction plus inverse
/// radius: (x', y', z', 1/r). inv_radius lies in (0, 1]; 1 means on the
/// sphere, and 0 is the point at infinity (reachable only as an integration
/// endpoint, never a sample).
struct InvertedSpherePoint {
    Vec3 direction;
    double inv_radius = 1.0;
};

/// Where a ray starting inside the unit sphere crosses it.
/// far_point = origin + t_far * direction lies on the sphere; midpoint is the
/// chord midpoint (the ray's closest approach to the center), at t_mid.
struct SphereCrossing {
    double t_far = 0.0;
    double t_mid = 0.0;
    Vec3 midpoint;
    Vec3 far_point;
};

/// Similarity transform (p - center) * scale placing cameras inside a target
/// radius around the origin.
struct SimilarityTransform {
    Vec3 center;
    double scale = 1.0;

    Vec3 apply(const Vec3& p) const { return (p - center) * scale; }
};

struct OriginOutsideSphere : std::runtime_error {
    OriginOutsideSphere() : std::runtime_error("ray origin lies on or outside the unit sphere") {}
};
struct InvalidInvRadius : std::runtime_error {
    InvalidInvRadius() : std::runtime_error("inverse radius must lie in (0, 1]") {}
};
struct PointInsideSphere : std::runtime_error {
    PointInsideSphere() : std::runtime_error("point must lie strictly outside the unit sphere") {}
};

/// Exit crossing of a ray whose origin is strictly inside the unit sphere.
/// t_far solves |o + t d| = 1 (unique positive root), t_mid solves
/// d . (o + t d) = 0. Throws OriginOutsideSphere if |origin| >= 1.
SphereCrossing intersect_unit_sphere(const Ray& ray);

/// Unit direction (x', y', z') of the point at radius 1/inv_r on the ray
/// beyond the sphere: the far crossing point rotated about
/// normalize(midpoint x direction) by arcsin|b| - arcsin(|b| * inv_r).
/// Rays through the center (|midpoint| < 1e-9) return the ray direction.
/// Throws InvalidInvRadius if inv_r is outside (0, 1].
Vec3 outer_direction(const SphereCrossing& crossing, const Ray& ray, double inv_r);

/// (x', y', z', 1/r) coordinates of a Euclidean point with |p| > 1.
/// Throws PointInsideSphere otherwise.
InvertedSpherePoint reparam_point(const Vec3& p);

/// Rodrigues rotation of v about a unit axis.
Vec3 rotate_about_axis(const Vec3& v, const Vec3& axis, double angle);

/// Centering/scaling transform placing every camera within target_radius of
/// the origin: center = centroid, scale = target_radius / max distance.
/// All positions identical is degenerate and yields scale 1.
SimilarityTransform normalize_scene(std::span<const Vec3> camera_positions, double target_radius);

}  // namespace volray
