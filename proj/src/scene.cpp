#include "volray/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "volray/parallel.hpp"
#include "volray/rng.hpp"

namespace volray {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kPi = 3.14159265358979323846;

double smoothstep01(double t) { return t * t * (3.0 - 2.0 * t); }

/// 1 deep inside (sdf <= -softness), 0 outside (sdf >= 0), smooth between.
double soft_inside(double sdf, double softness) {
    if (sdf >= 0.0) return 0.0;
    if (sdf <= -softness) return 1.0;
    return smoothstep01(-sdf / softness);
}

double box_sdf(const Vec3& q, const Vec3& he) {
    const Vec3 d{std::abs(q.x) - he.x, std::abs(q.y) - he.y, std::abs(q.z) - he.z};
    const Vec3 outside{std::max(d.x, 0.0), std::max(d.y, 0.0), std::max(d.z, 0.0)};
    const double inside = std::min(0.0, std::max({d.x, d.y, d.z}));
    return outside.norm() + inside;
}

double texture_factor(const Vec3& p, double freq) {
    if (freq <= 0.0) return 1.0;
    return 0.7 + 0.3 * std::sin(freq * (p.x + 0.7 * p.z)) * std::cos(freq * (p.y - 0.3 * p.x));
}

Vec3 clamp01(const Vec3& c) {
    return {std::clamp(c.x, 0.0, 1.0), std::clamp(c.y, 0.0, 1.0), std::clamp(c.z, 0.0, 1.0)};
}

json camera_to_json(const Camera& c, const std::string& file, Split split) {
    json j;
    j["file"] = file;
    j["width"] = c.width;
    j["height"] = c.height;
    j["fx"] = c.fx;
    j["fy"] = c.fy;
    j["cx"] = c.cx;
    j["cy"] = c.cy;
    std::vector<double> rot;
    rot.reserve(9);
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) rot.push_back(c.rotation.m[r][k]);
    j["rotation"] = rot;
    j["position"] = {c.position.x, c.position.y, c.position.z};
    j["split"] = split == Split::train ? "train" : "test";
    return j;
}

}  // namespace

void Camera::validate(double tol) const {
    const Mat3 rt = rotation.transposed();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double want = i == j ? 1.0 : 0.0;
            if (std::abs(rt.row(i).dot(rotation.col(j)) - want) > tol)
                throw NonOrthonormalRotation();
        }
    if (rotation.determinant() < 0.0) throw NonOrthonormalRotation();
}

Ray generate_ray(const Camera& camera, double px, double py) {
    if (px < 0.0 || px > camera.width || py < 0.0 || py > camera.height) throw OutOfBounds();
    const Vec3 cam_dir{(px - camera.cx) / camera.fx, (py - camera.cy) / camera.fy, 1.0};
    return {camera.position, (camera.rotation * cam_dir).normalized()};
}

std::vector<Camera> hemisphere_cameras(int n, double radius, const Vec3& look_at,
                                       std::uint64_t seed, int width, int height,
                                       double fov_degrees) {
    std::vector<Camera> cameras;
    cameras.reserve(static_cast<std::size_t>(n));
    Rng rng = Rng::derive(seed, {0x68656d69ULL});
    const double fx = (width / 2.0) / std::tan(fov_degrees * kPi / 360.0);
    for (int i = 0; i < n; ++i) {
        const double z = rng.uniform();  // cos of polar angle; uniform on the hemisphere
        const double phi = rng.uniform(0.0, 2.0 * kPi);
        const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
        const Vec3 dir{s * std::cos(phi), s * std::sin(phi), z};

        Camera cam;
        cam.width = width;
        cam.height = height;
        cam.fx = cam.fy = fx;
        cam.cx = width / 2.0;
        cam.cy = height / 2.0;
        cam.position = look_at + dir * radius;

        const Vec3 forward = (look_at - cam.position).normalized();
        Vec3 up{0.0, 0.0, 1.0};
        if (forward.cross(up).norm() < 1e-9) up = {0.0, 1.0, 0.0};
        const Vec3 right = forward.cross(up).normalized();
        const Vec3 down = forward.cross(right);  // y axis points down in image space
        cam.rotation = Mat3::from_columns(right, down, forward);
        cameras.push_back(cam);
    }
    return cameras;
}

double Primitive::density_at(const Vec3& p) const {
    const Vec3 q = p - center;
    double sdf = 0.0;
    switch (shape) {
        case Shape::sphere: sdf = q.norm() - radius; break;
        case Shape::box: sdf = box_sdf(q, half_extents); break;
        case Shape::shell: sdf = std::abs(q.norm() - radius) - 0.5 * thickness; break;
    }
    return density * soft_inside(sdf, softness);
}

Vec3 Primitive::surface_normal(const Vec3& p) const {
    const Vec3 q = p - center;
    if (shape == Shape::box) {
        // dominant axis of the normalized offset
        const Vec3 r{q.x / half_extents.x, q.y / half_extents.y, q.z / half_extents.z};
        const double ax = std::abs(r.x), ay = std::abs(r.y), az = std::abs(r.z);
        if (ax >= ay && ax >= az) return {r.x > 0 ? 1.0 : -1.0, 0.0, 0.0};
        if (ay >= az) return {0.0, r.y > 0 ? 1.0 : -1.0, 0.0};
        return {0.0, 0.0, r.z > 0 ? 1.0 : -1.0};
    }
    const double n = q.norm();
    if (n < 1e-12) return {0.0, 0.0, 1.0};
    return q / n;
}

double EnvironmentShell::density_at_radius(double r) const {
    const double sdf = std::abs(r - radius) - 0.5 * thickness;
    return density * soft_inside(sdf, 0.15 * thickness);
}

Vec3 EnvironmentShell::emission(const Vec3& direction_from_origin) const {
    const Vec3 u = direction_from_origin.normalized();
    const double phi = std::atan2(u.y, u.x);
    const double theta = std::asin(std::clamp(u.z, -1.0, 1.0));
    const double f = pattern_frequency;
    return {0.55 + 0.30 * std::sin(f * phi) * std::cos(theta),
            0.55 + 0.30 * std::sin(f * phi + 2.1) * std::cos(theta),
            0.60 + 0.30 * std::sin(2.0 * theta) * std::cos(0.5 * f * phi)};
}

double SyntheticScene::density_at(const Vec3& p) const {
    double sigma = 0.0;
    for (const Primitive& prim : primitives) sigma += prim.density_at(p);
    if (environment) sigma += environment->density_at_radius(p.norm());
    return sigma;
}

Vec3 SyntheticScene::radiance_at(const Vec3& p, const Vec3& view_direction) const {
    const Vec3 light = -light_direction.normalized();
    double total = 0.0;
    Vec3 blended;
    for (const Primitive& prim : primitives) {
        const double w = prim.density_at(p);
        if (w <= 0.0) continue;
        // texture in the primitive's local frame so similarity transforms
        // preserve the pattern
        const Vec3 albedo = prim.albedo * texture_factor(p - prim.center, prim.texture_frequency);
        Vec3 c;
        if (prim.material == Primitive::Material::emissive) {
            c = albedo;
        } else {
            const Vec3 n = prim.surface_normal(p);
            const double diffuse = ambient + (1.0 - ambient) * std::max(0.0, n.dot(light));
            c = albedo * diffuse;
            if (prim.material == Primitive::Material::phong) {
                const Vec3 reflected = n * (2.0 * n.dot(light)) - light;
                const double spec = std::pow(std::max(0.0, reflected.dot(-view_direction)),
                                             prim.phong_exponent);
                c += Vec3{1.0, 1.0, 1.0} * (prim.phong_strength * spec);
            }
        }
        blended += clamp01(c) * w;
        total += w;
    }
    if (environment) {
        const double w = environment->density_at_radius(p.norm());
        if (w > 0.0) {
            blended += clamp01(environment->emission(p)) * w;
            total += w;
        }
    }
    if (total <= 0.0) return {0.0, 0.0, 0.0};
    return blended / total;
}

double SyntheticScene::far_bound(double max_camera_distance) const {
    double content = 0.0;
    for (const Primitive& prim : primitives) {
        double extent = 0.0;
        switch (prim.shape) {
            case Primitive::Shape::sphere: extent = prim.radius; break;
            case Primitive::Shape::box: extent = prim.half_extents.norm(); break;
            case Primitive::Shape::shell: extent = prim.radius + 0.5 * prim.thickness; break;
        }
        content = std::max(content, prim.center.norm() + extent + prim.softness);
    }
    if (environment)
        content = std::max(content,
                           environment->radius + 0.5 * environment->thickness +
                               0.15 * environment->thickness);
    return max_camera_distance + content;
}

SyntheticScene preset_scene(const std::string& name) {
    SyntheticScene scene;
    if (name == "glossy") {
        Primitive glossy;
        glossy.shape = Primitive::Shape::sphere;
        glossy.center = {0.0, 0.0, 0.05};
        glossy.radius = 0.42;
        glossy.density = 60.0;
        glossy.albedo = {0.85, 0.35, 0.25};
        glossy.material = Primitive::Material::phong;
        glossy.phong_exponent = 24.0;
        glossy.phong_strength = 0.65;
        glossy.softness = 0.04;
        glossy.texture_frequency = 9.0;
        scene.primitives.push_back(glossy);

        Primitive matte;
        matte.center = {0.42, 0.32, -0.22};
        matte.radius = 0.22;
        matte.density = 60.0;
        matte.albedo = {0.30, 0.55, 0.85};
        matte.softness = 0.03;
        matte.texture_frequency = 11.0;
        scene.primitives.push_back(matte);

        Primitive block;
        block.shape = Primitive::Shape::box;
        block.center = {-0.45, -0.30, -0.28};
        block.half_extents = {0.22, 0.18, 0.16};
        block.density = 60.0;
        block.albedo = {0.40, 0.80, 0.45};
        block.softness = 0.03;
        scene.primitives.push_back(block);
        return scene;
    }
    if (name == "unbounded") {
        // Scene units: cameras sit near radius 1; synth normalizes everything
        // so that cameras land inside radius 1/8.
        Primitive fg;
        fg.center = {0.0, 0.0, 0.0};
        fg.radius = 0.28;
        fg.density = 90.0;
        fg.albedo = {0.85, 0.45, 0.25};
        fg.material = Primitive::Material::phong;
        fg.phong_exponent = 16.0;
        fg.phong_strength = 0.35;
        fg.softness = 0.035;
        fg.texture_frequency = 10.0;
        scene.primitives.push_back(fg);

        Primitive mid1;
        mid1.center = {5.0, 3.0, 0.6};
        mid1.radius = 0.9;
        mid1.density = 30.0;
        mid1.albedo = {0.35, 0.60, 0.85};
        mid1.softness = 0.10;
        mid1.texture_frequency = 2.0;
        scene.primitives.push_back(mid1);

        Primitive mid2;
        mid2.center = {-8.0, 4.5, 1.2};
        mid2.radius = 1.5;
        mid2.density = 30.0;
        mid2.albedo = {0.85, 0.75, 0.30};
        mid2.softness = 0.15;
        mid2.texture_frequency = 1.2;
        scene.primitives.push_back(mid2);

        Primitive mid3;
        mid3.shape = Primitive::Shape::box;
        mid3.center = {2.0, -9.0, 0.8};
        mid3.half_extents = {1.6, 1.2, 1.8};
        mid3.density = 30.0;
        mid3.albedo = {0.45, 0.85, 0.55};
        mid3.softness = 0.15;
        scene.primitives.push_back(mid3);

        EnvironmentShell env;
        env.radius = 100.0;
        env.thickness = 4.0;
        env.density = 12.0;
        env.pattern_frequency = 3.0;
        scene.environment = env;
        return scene;
    }
    if (name == "smoke") {
        Primitive ball;
        ball.radius = 0.40;
        ball.density = 40.0;
        ball.albedo = {0.75, 0.55, 0.30};
        ball.softness = 0.05;
        ball.texture_frequency = 6.0;
        scene.primitives.push_back(ball);
        return scene;
    }
    throw std::invalid_argument("unknown scene preset: " + name);
}

bool is_preset_scene(const std::string& name) {
    return name == "glossy" || name == "unbounded" || name == "smoke";
}

SyntheticScene transform_scene(const SyntheticScene& scene, const SimilarityTransform& t) {
    SyntheticScene out = scene;
    const double s = t.scale;
    for (Primitive& prim : out.primitives) {
        prim.center = t.apply(prim.center);
        prim.radius *= s;
        prim.thickness *= s;
        prim.half_extents *= s;
        prim.softness *= s;
        prim.density /= s;
        if (prim.texture_frequency > 0.0) prim.texture_frequency /= s;
    }
    if (out.environment) {
        // The far shell is centered on the origin; only sensible when the
        // recentering offset is small relative to its radius.
        out.environment->radius *= s;
        out.environment->thickness *= s;
        out.environment->density /= s;
    }
    return out;
}

Camera transform_camera(const Camera& camera, const SimilarityTransform& t) {
    Camera out = camera;
    out.position = t.apply(camera.position);
    return out;
}

Vec3 oracle_render_ray(const SyntheticScene& scene, const Ray& ray, double t_near, double t_far,
                       int n_samples) {
    // Midpoint Riemann integration of sigma * c * exp(-integral of sigma),
    // with the optical depth accumulated to each sample's midpoint. This is
    // deliberately a different discretization from the alpha-compositing
    // renderer so the two can check each other.
    const double dt = (t_far - t_near) / n_samples;
    double tau = 0.0;
    Vec3 rgb;
    for (int i = 0; i < n_samples; ++i) {
        const double t = t_near + (i + 0.5) * dt;
        const Vec3 p = ray.at(t);
        const double sigma = scene.density_at(p);
        if (sigma > 0.0) {
            const Vec3 c = scene.radiance_at(p, ray.direction);
            const double transmittance = std::exp(-(tau + 0.5 * sigma * dt));
            rgb += c * (transmittance * sigma * dt);
            tau += sigma * dt;
            if (tau > 40.0) break;  // fully opaque
        }
    }
    return rgb;
}

Image oracle_render(const SyntheticScene& scene, const Camera& camera, int n_samples) {
    Image im = Image::zeros(camera.width, camera.height);
    const double t_far = scene.far_bound(camera.position.norm());
    parallel_chunks(camera.height, 4, [&](std::int64_t y0, std::int64_t y1) {
        for (std::int64_t y = y0; y < y1; ++y) {
            for (int x = 0; x < camera.width; ++x) {
                const Ray ray = generate_ray(camera, x + 0.5, static_cast<double>(y) + 0.5);
                im.set_pixel(static_cast<int>(x), static_cast<int>(y),
                             clamp01(oracle_render_ray(scene, ray, 1e-4, t_far, n_samples)));
            }
        }
    });
    return im;
}

std::vector<std::size_t> PosedDataset::indices_of(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == s) out.push_back(i);
    return out;
}

void save_dataset(const PosedDataset& dataset, const std::string& path) {
    if (dataset.cameras.size() != dataset.images.size() ||
        dataset.cameras.size() != dataset.splits.size())
        throw MalformedManifest("dataset arrays have different lengths");
    fs::create_directories(path);
    json manifest;
    manifest["format"] = "volray-dataset";
    manifest["version"] = 1;
    json views = json::array();
    for (std::size_t i = 0; i < dataset.cameras.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "view_%04zu.png", i);
        views.push_back(camera_to_json(dataset.cameras[i], name, dataset.splits[i]));
        write_png(dataset.images[i], (fs::path(path) / name).string());
    }
    manifest["images"] = views;
    std::ofstream out(fs::path(path) / "manifest.json");
    if (!out) throw MalformedManifest("cannot write manifest.json under " + path);
    out << manifest.dump(2) << "\n";
}

PosedDataset load_dataset(const std::string& path) {
    std::ifstream in(fs::path(path) / "manifest.json");
    if (!in) throw MalformedManifest("missing manifest.json under " + path);
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw MalformedManifest(std::string("invalid manifest.json: ") + e.what());
    }
    if (manifest.value("format", "") != "volray-dataset")
        throw MalformedManifest("manifest.json is not a volray dataset");

    PosedDataset ds;
    try {
        for (const json& view : manifest.at("images")) {
            Camera cam;
            cam.width = view.at("width");
            cam.height = view.at("height");
            cam.fx = view.at("fx");
            cam.fy = view.at("fy");
            cam.cx = view.at("cx");
            cam.cy = view.at("cy");
            const auto rot = view.at("rotation").get<std::vector<double>>();
            if (rot.size() != 9) throw MalformedManifest("rotation must have 9 entries");
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    cam.rotation.m[r][c] = rot[static_cast<std::size_t>(3 * r + c)];
            const auto posv = view.at("position").get<std::vector<double>>();
            if (posv.size() != 3) throw MalformedManifest("position must have 3 entries");
            cam.position = {posv[0], posv[1], posv[2]};
            if (cam.width <= 0 || cam.height <= 0 || cam.fx <= 0.0 || cam.fy <= 0.0)
                throw MalformedManifest("non-positive camera intrinsics for " +
                                        std::string(view.at("file")));
            cam.validate(1e-6);

            const std::string split = view.at("split");
            if (split != "train" && split != "test")
                throw MalformedManifest("unknown split: " + split);

            const std::string file = view.at("file");
            const fs::path img_path = fs::path(path) / file;
            if (!fs::exists(img_path)) throw MissingImage("missing image file: " + file);
            Image img = read_png(img_path.string());
            if (img.width != cam.width || img.height != cam.height)
                throw MalformedManifest("image size does not match manifest for " + file);

            ds.cameras.push_back(cam);
            ds.images.push_back(std::move(img));
            ds.splits.push_back(split == "train" ? Split::train : Split::test);
        }
    } catch (const json::exception& e) {
        throw MalformedManifest(std::string("invalid manifest.json: ") + e.what());
    }
    return ds;
}

}  // namespace volray
