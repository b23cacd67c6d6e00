#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "volray/rng.hpp"
#include "volray/scene.hpp"

using namespace volray;
namespace fs = std::filesystem;

namespace {

Camera simple_camera(int w = 8, int h = 6) {
    Camera cam;
    cam.width = w;
    cam.height = h;
    cam.fx = cam.fy = 5.0;
    cam.cx = w / 2.0;
    cam.cy = h / 2.0;
    cam.position = {0, 0, -2};
    return cam;
}

PosedDataset tiny_dataset() {
    PosedDataset ds;
    const auto cams = hemisphere_cameras(3, 2.0, {0, 0, 0}, 9, 16, 12, 45.0);
    const SyntheticScene scene = preset_scene("smoke");
    for (std::size_t i = 0; i < cams.size(); ++i) {
        ds.cameras.push_back(cams[i]);
        ds.images.push_back(oracle_render(scene, cams[i], 512));
        ds.splits.push_back(i == 2 ? Split::test : Split::train);
    }
    return ds;
}

}  // namespace

TEST_CASE("generate_ray: principal point gives the camera's forward axis") {
    Camera cam = simple_camera();
    cam.rotation = Mat3::from_columns({0, -1, 0}, {0, 0, -1}, {1, 0, 0});
    const Ray ray = generate_ray(cam, cam.cx, cam.cy);
    CHECK((ray.direction - cam.rotation.col(2)).norm() < 1e-15);
    CHECK((ray.origin - cam.position).norm() == 0.0);
}

TEST_CASE("generate_ray: identity rotation, one focal length to the right") {
    Camera cam = simple_camera(12, 12);
    cam.fx = cam.fy = 5.0;  // cx + fx stays inside the image
    cam.position = {0, 0, 0};
    const Ray ray = generate_ray(cam, cam.cx + cam.fx, cam.cy);
    const Vec3 expect = Vec3{1, 0, 1}.normalized();
    CHECK((ray.direction - expect).norm() < 1e-15);
}

TEST_CASE("generate_ray: unit direction for random pixels") {
    Rng rng(1);
    const auto cams = hemisphere_cameras(4, 3.0, {0.1, -0.2, 0.0}, 5);
    for (int i = 0; i < 1000; ++i) {
        const Camera& cam = cams[rng.below(cams.size())];
        const double px = rng.uniform(0.0, cam.width);
        const double py = rng.uniform(0.0, cam.height);
        CHECK(std::abs(generate_ray(cam, px, py).direction.norm() - 1.0) < 1e-12);
    }
}

TEST_CASE("generate_ray: out of bounds") {
    const Camera cam = simple_camera();
    CHECK_THROWS_AS(generate_ray(cam, -0.5, 2.0), OutOfBounds);
    CHECK_THROWS_AS(generate_ray(cam, 2.0, cam.height + 0.5), OutOfBounds);
}

TEST_CASE("hemisphere_cameras: positions, determinism, and count") {
    const Vec3 look_at{0, 0, 0};
    const auto cams = hemisphere_cameras(50, 3.0, look_at, 21);
    CHECK(cams.size() == 50);
    for (const Camera& cam : cams) {
        CHECK(cam.position.z >= 0.0);
        CHECK(std::abs((cam.position - look_at).norm() - 3.0) < 1e-9);
        cam.validate(1e-9);
        CHECK(cam.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-9));
        // aimed at the target: forward axis points from the camera to look_at
        const Vec3 forward = cam.rotation.col(2);
        CHECK((forward - (look_at - cam.position).normalized()).norm() < 1e-9);
    }
    const auto again = hemisphere_cameras(50, 3.0, look_at, 21);
    for (std::size_t i = 0; i < cams.size(); ++i) {
        CHECK(cams[i].position == again[i].position);
        CHECK(cams[i].rotation == again[i].rotation);
    }
    const auto other = hemisphere_cameras(50, 3.0, look_at, 22);
    CHECK(!(other[0].position == cams[0].position));
}

TEST_CASE("oracle_render: empty scene is black") {
    SyntheticScene scene;
    const Image im = oracle_render(scene, simple_camera(), 256);
    for (double v : im.data) CHECK(v == 0.0);
}

TEST_CASE("oracle_render_ray: Lambertian surface point is view-independent") {
    SyntheticScene scene;
    scene.light_direction = {-1, 0, 0};  // mirror lobe at (0.4,0,0) points along +x
    Primitive ball;
    ball.radius = 0.4;
    ball.density = 200.0;
    ball.albedo = {0.6, 0.4, 0.2};
    ball.softness = 0.02;
    scene.primitives.push_back(ball);

    // Two rays hitting the same surface point from different directions.
    const Vec3 target{0.4, 0.0, 0.0};
    const Vec3 from1{2.0, 0.0, 0.0};
    const Vec3 from2{1.5, 0.9, 0.5};
    const Ray r1{from1, (target - from1).normalized()};
    const Ray r2{from2, (target - from2).normalized()};
    const Vec3 c1 = oracle_render_ray(scene, r1, 1e-3, 4.0, 8192);
    const Vec3 c2 = oracle_render_ray(scene, r2, 1e-3, 4.0, 8192);
    CHECK((c1 - c2).norm() < 2e-2);

    // the same configuration with a specular lobe is view-dependent
    scene.primitives[0].material = Primitive::Material::phong;
    scene.primitives[0].phong_strength = 0.8;
    scene.primitives[0].phong_exponent = 8.0;
    const Vec3 g1 = oracle_render_ray(scene, r1, 1e-3, 4.0, 8192);
    const Vec3 g2 = oracle_render_ray(scene, r2, 1e-3, 4.0, 8192);
    CHECK((g1 - g2).norm() > 5e-2);
}

TEST_CASE("oracle_render: reference self-convergence") {
    const SyntheticScene scene = preset_scene("smoke");
    const auto cams = hemisphere_cameras(1, 2.0, {0, 0, 0}, 31, 8, 8, 40.0);
    const Image a = oracle_render(scene, cams[0], 1 << 14);
    const Image b = oracle_render(scene, cams[0], 1 << 16);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        max_diff = std::max(max_diff, std::abs(a.data[i] - b.data[i]));
    CHECK(max_diff < 1e-4);
}

TEST_CASE("scene fields satisfy sigma >= 0 and c in [0,1]^3 at random probes") {
    Rng rng(41);
    for (const char* preset : {"glossy", "unbounded", "smoke"}) {
        const SyntheticScene scene = preset_scene(preset);
        for (int i = 0; i < 200000; ++i) {
            const double extent = preset == std::string("unbounded") ? 110.0 : 2.0;
            const Vec3 p{rng.uniform(-extent, extent), rng.uniform(-extent, extent),
                         rng.uniform(-extent, extent)};
            Vec3 d{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
            if (d.norm() < 1e-3) d = {0, 0, 1};
            d = d.normalized();
            const double sigma = scene.density_at(p);
            CHECK(sigma >= 0.0);
            if (sigma > 0.0) {
                const Vec3 c = scene.radiance_at(p, d);
                CHECK(c.x >= 0.0);
                CHECK(c.x <= 1.0);
                CHECK(c.y >= 0.0);
                CHECK(c.y <= 1.0);
                CHECK(c.z >= 0.0);
                CHECK(c.z <= 1.0);
            }
        }
    }
}

TEST_CASE("transform_scene preserves rendered images") {
    const SyntheticScene scene = preset_scene("smoke");
    const auto cams = hemisphere_cameras(2, 2.0, {0, 0, 0}, 51, 12, 12, 40.0);
    std::vector<Vec3> positions;
    for (const Camera& c : cams) positions.push_back(c.position);
    const SimilarityTransform t = normalize_scene(positions, 0.125);
    const SyntheticScene scaled = transform_scene(scene, t);

    // the two integration grids are not aligned, so agreement is limited by
    // the quadrature error, which shrinks with the sample count
    for (const Camera& cam : cams) {
        const Image a = oracle_render(scene, cam, 1 << 14);
        const Image b = oracle_render(scaled, transform_camera(cam, t), 1 << 14);
        double max_diff = 0.0;
        for (std::size_t i = 0; i < a.data.size(); ++i)
            max_diff = std::max(max_diff, std::abs(a.data[i] - b.data[i]));
        CHECK(max_diff < 1e-5);
    }
}

TEST_CASE("dataset round trip: poses exact, images 8-bit exact") {
    const fs::path dir = fs::temp_directory_path() / "volray_ds_roundtrip";
    fs::remove_all(dir);
    const PosedDataset ds = tiny_dataset();
    save_dataset(ds, dir.string());
    const PosedDataset loaded = load_dataset(dir.string());

    REQUIRE(loaded.cameras.size() == ds.cameras.size());
    for (std::size_t i = 0; i < ds.cameras.size(); ++i) {
        CHECK(loaded.cameras[i].position == ds.cameras[i].position);
        CHECK(loaded.cameras[i].rotation == ds.cameras[i].rotation);
        CHECK(loaded.cameras[i].fx == ds.cameras[i].fx);
        CHECK(loaded.cameras[i].cx == ds.cameras[i].cx);
        CHECK(loaded.splits[i] == ds.splits[i]);
    }

    // saving the loaded dataset reproduces the files byte for byte
    const fs::path dir2 = fs::temp_directory_path() / "volray_ds_roundtrip2";
    fs::remove_all(dir2);
    save_dataset(loaded, dir2.string());
    for (const auto& entry : fs::directory_iterator(dir)) {
        const fs::path other = dir2 / entry.path().filename();
        REQUIRE(fs::exists(other));
        std::ifstream f1(entry.path(), std::ios::binary);
        std::ifstream f2(other, std::ios::binary);
        const std::string b1((std::istreambuf_iterator<char>(f1)), {});
        const std::string b2((std::istreambuf_iterator<char>(f2)), {});
        CHECK(b1 == b2);
    }
}

TEST_CASE("load_dataset: missing image file") {
    const fs::path dir = fs::temp_directory_path() / "volray_ds_missing";
    fs::remove_all(dir);
    save_dataset(tiny_dataset(), dir.string());
    fs::remove(dir / "view_0001.png");
    CHECK_THROWS_AS(load_dataset(dir.string()), MissingImage);
}

TEST_CASE("load_dataset: reflection rotations are rejected") {
    const fs::path dir = fs::temp_directory_path() / "volray_ds_reflect";
    fs::remove_all(dir);
    save_dataset(tiny_dataset(), dir.string());
    // flip one rotation row to make the determinant -1
    std::ifstream in(dir / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    in.close();
    const std::string needle = "\"rotation\": [";
    const auto at = text.find(needle);
    REQUIRE(at != std::string::npos);
    // replace the full 9-entry rotation of the first view with a reflection
    const auto end = text.find(']', at);
    text.replace(at, end - at + 1,
                 "\"rotation\": [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0]");
    std::ofstream out(dir / "manifest.json");
    out << text;
    out.close();
    CHECK_THROWS_AS(load_dataset(dir.string()), NonOrthonormalRotation);
}

TEST_CASE("load_dataset: malformed manifest") {
    const fs::path dir = fs::temp_directory_path() / "volray_ds_bad";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "manifest.json") << "{ not json";
    CHECK_THROWS_AS(load_dataset(dir.string()), MalformedManifest);
    std::ofstream(dir / "manifest.json") << "{\"format\": \"something else\"}";
    CHECK_THROWS_AS(load_dataset(dir.string()), MalformedManifest);
    CHECK_THROWS_AS(load_dataset((dir / "nope").string()), MalformedManifest);
}

TEST_CASE("png round trip is 8-bit exact") {
    const fs::path dir = fs::temp_directory_path() / "volray_png";
    fs::create_directories(dir);
    Rng rng(61);
    Image im = Image::zeros(9, 7);
    for (double& v : im.data) v = rng.uniform();
    const std::string path = (dir / "t.png").string();
    write_png(im, path);
    const Image back = read_png(path);
    REQUIRE(back.width == im.width);
    REQUIRE(back.height == im.height);
    for (std::size_t i = 0; i < im.data.size(); ++i) {
        const double quantized = std::floor(std::clamp(im.data[i], 0.0, 1.0) * 255.0 + 0.5) / 255.0;
        CHECK(back.data[i] == doctest::Approx(quantized).epsilon(1e-12));
    }
    write_png(back, (dir / "t2.png").string());
    const Image back2 = read_png((dir / "t2.png").string());
    CHECK(back2.data == back.data);
}
