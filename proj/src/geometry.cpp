#include "volray/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace volray {

SphereCrossing intersect_unit_sphere(const Ray& ray) {
    const Vec3& o = ray.origin;
    const Vec3& d = ray.direction;
    if (o.squared_norm() >= 1.0) throw OriginOutsideSphere();

    // |o + t d|^2 = 1  =>  t^2 + 2 (o.d) t + |o|^2 - 1 = 0.
    const double od = o.dot(d);
    const double disc = od * od - (o.squared_norm() - 1.0);
    SphereCrossing c;
    c.t_mid = -od;
    c.t_far = -od + std::sqrt(disc);
    c.midpoint = o + d * c.t_mid;
    c.far_point = o + d * c.t_far;
    return c;
}

Vec3 rotate_about_axis(const Vec3& v, const Vec3& axis, double angle) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    return v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c));
}

Vec3 outer_direction(const SphereCrossing& crossing, const Ray& ray, double inv_r) {
    if (!(inv_r > 0.0) || inv_r > 1.0) throw InvalidInvRadius();

    const double b_norm = crossing.midpoint.norm();
    if (b_norm < 1e-9) return ray.direction;  // b x d vanishes; the limit is d

    const Vec3 axis = crossing.midpoint.cross(ray.direction).normalized();
    const double omega = std::asin(std::min(b_norm, 1.0)) - std::asin(b_norm * inv_r);
    return rotate_about_axis(crossing.far_point, axis, omega);
}

InvertedSpherePoint reparam_point(const Vec3& p) {
    const double r = p.norm();
    if (r <= 1.0) throw PointInsideSphere();
    return {p / r, 1.0 / r};
}

SimilarityTransform normalize_scene(std::span<const Vec3> camera_positions, double target_radius) {
    if (camera_positions.empty()) throw std::invalid_argument("normalize_scene: no cameras");
    if (!(target_radius > 0.0) || target_radius > 1.0)
        throw std::invalid_argument("normalize_scene: target_radius must lie in (0, 1]");

    Vec3 center;
    for (const Vec3& p : camera_positions) center += p;
    center = center / static_cast<double>(camera_positions.size());

    double max_dist = 0.0;
    for (const Vec3& p : camera_positions) max_dist = std::max(max_dist, (p - center).norm());

    SimilarityTransform t;
    t.center = center;
    t.scale = max_dist > 0.0 ? target_radius / max_dist : 1.0;
    return t;
}

}  // namespace volray
