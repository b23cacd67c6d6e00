#include "volray/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace volray {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Deterministic interleave: view i goes to the test split whenever the
/// running test quota crosses an integer.
std::vector<Split> interleave_splits(int n_train, int n_test) {
    const int total = n_train + n_test;
    std::vector<Split> splits(static_cast<std::size_t>(total), Split::train);
    for (int i = 0; i < total; ++i) {
        const long before = static_cast<long>(i) * n_test / total;
        const long after = static_cast<long>(i + 1) * n_test / total;
        if (after > before) splits[static_cast<std::size_t>(i)] = Split::test;
    }
    return splits;
}

struct SynthResult {
    PosedDataset dataset;
    SyntheticScene scene;  // in the dataset's (possibly normalized) units
};

SynthResult synth_with_scene(const SynthConfig& config) {
    SyntheticScene scene = preset_scene(config.scene);
    const int total = config.n_train + config.n_test;
    std::vector<Camera> cameras =
        hemisphere_cameras(total, config.camera_radius, {0.0, 0.0, 0.0}, config.seed,
                           config.width, config.height, config.fov_degrees);

    if (config.normalize) {
        std::vector<Vec3> positions;
        positions.reserve(cameras.size());
        for (const Camera& c : cameras) positions.push_back(c.position);
        const SimilarityTransform t = normalize_scene(positions, config.normalize_target);
        scene = transform_scene(scene, t);
        for (Camera& c : cameras) c = transform_camera(c, t);
    }

    SynthResult result;
    result.scene = scene;
    result.dataset.cameras = cameras;
    result.dataset.splits = interleave_splits(config.n_train, config.n_test);
    result.dataset.images.reserve(cameras.size());
    for (const Camera& cam : cameras)
        result.dataset.images.push_back(oracle_render(scene, cam, config.oracle_samples));
    return result;
}

json train_config_to_json(const TrainConfig& c) {
    json j;
    j["mode"] = to_string(c.mode);
    j["batch_rays"] = c.batch_rays;
    j["iterations"] = c.iterations;
    j["lr"] = c.lr;
    j["n_coarse"] = c.n_coarse;
    j["n_fine"] = c.n_fine;
    j["seed"] = c.seed;
    j["eval_every"] = c.eval_every;
    j["arch_fg"] = json::parse(architecture_to_json_string(c.arch_fg));
    j["arch_bg"] = json::parse(architecture_to_json_string(c.arch_bg));
    j["share_coarse_fine"] = c.share_coarse_fine;
    j["t_near"] = c.t_near;
    j["t_far"] = c.t_far;
    j["jitter"] = c.jitter;
    j["frozen_sigma"] = json::parse(frozen_opacity_to_json_string(c.frozen_sigma));
    j["eval_train_views"] = c.eval_train_views;
    j["eval_test_views"] = c.eval_test_views;
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    const auto mode = train_mode_from_string(j.at("mode"));
    if (!mode) throw std::runtime_error("unknown train mode in run config");
    c.mode = *mode;
    c.batch_rays = j.at("batch_rays");
    c.iterations = j.at("iterations");
    c.lr = j.at("lr");
    c.n_coarse = j.at("n_coarse");
    c.n_fine = j.at("n_fine");
    c.seed = j.at("seed");
    c.eval_every = j.at("eval_every");
    c.arch_fg = architecture_from_json_string(j.at("arch_fg").dump());
    c.arch_bg = architecture_from_json_string(j.at("arch_bg").dump());
    c.share_coarse_fine = j.at("share_coarse_fine");
    c.t_near = j.at("t_near");
    c.t_far = j.at("t_far");
    c.jitter = j.at("jitter");
    c.frozen_sigma = frozen_opacity_from_json_string(j.at("frozen_sigma").dump());
    c.eval_train_views = j.at("eval_train_views");
    c.eval_test_views = j.at("eval_test_views");
    return c;
}

std::string format_row(const ExperimentRow& r) {
    char line[256];
    std::snprintf(line, sizeof(line), "%s,%s,%.6f,%.6f,%.6f\n", r.variant.c_str(),
                  r.seed_label.c_str(), r.train_psnr, r.test_psnr, r.test_ssim);
    return line;
}

ExperimentRow mean_row(const std::vector<ExperimentRow>& rows, const std::string& variant) {
    ExperimentRow mean;
    mean.variant = variant;
    mean.seed_label = "mean";
    int count = 0;
    for (const ExperimentRow& r : rows) {
        if (r.variant != variant || r.seed_label == "mean") continue;
        mean.train_psnr += r.train_psnr;
        mean.test_psnr += r.test_psnr;
        mean.test_ssim += r.test_ssim;
        ++count;
    }
    if (count > 0) {
        mean.train_psnr /= count;
        mean.test_psnr /= count;
        mean.test_ssim /= count;
    }
    return mean;
}

/// Architecture used by the glossy-scene experiments.
FieldArchitecture glossy_arch(FieldVariant variant, int view_depth) {
    if (variant == FieldVariant::vanilla_symmetric)
        return vanilla_mlp_architecture(FieldInput::euclidean_3d);
    FieldArchitecture a = nerf_mlp_architecture(FieldInput::euclidean_3d);
    a.view_branch_depth = view_depth;
    a.view_branch_width = 64;
    return a;
}

}  // namespace

PosedDataset synth_dataset(const SynthConfig& config) { return synth_with_scene(config).dataset; }

PosedDataset cmd_synth(const SynthConfig& config, const std::string& out_dir) {
    if (config.n_train < 1) throw std::invalid_argument("cmd_synth: need at least one train view");
    if (config.n_test == 0)
        std::fprintf(stderr, "warning: synthesizing a dataset with an empty test split\n");
    PosedDataset dataset = synth_dataset(config);
    if (!out_dir.empty()) save_dataset(dataset, out_dir);
    return dataset;
}

void save_run_config(const TrainConfig& config, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream out(fs::path(dir) / "run_config.json");
    if (!out) throw std::runtime_error("cannot write run_config.json under " + dir);
    out << train_config_to_json(config).dump(2) << "\n";
}

TrainConfig load_run_config(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "run_config.json");
    if (!in) throw std::runtime_error("missing run_config.json under " + dir);
    json j;
    in >> j;
    return train_config_from_json(j);
}

std::pair<TrainState, TrainLog> cmd_train(const PosedDataset& dataset, const TrainConfig& config,
                                          const std::string& out_dir) {
    if (!out_dir.empty()) save_run_config(config, out_dir);
    return fit(dataset, config, out_dir);
}

TrainState load_run(const std::string& run_dir) {
    const TrainConfig config = load_run_config(run_dir);
    TrainState state = make_train_state(config);
    for (std::size_t i = 0; i < state.roles.size(); ++i) {
        const std::string path = (fs::path(run_dir) / (state.roles[i] + ".ckpt")).string();
        Checkpoint ck = load_checkpoint(path);
        if (!(ck.model.arch == state.models[i].arch))
            throw ArchitectureMismatch("checkpoint " + path + " does not match the run config");
        state.models[i] = std::move(ck.model);
        state.iteration = ck.iteration;
    }
    return state;
}

EvalReport evaluate_split(const FieldSet& fields, const RenderConfig& config,
                          const PosedDataset& dataset, Split split,
                          const std::string& image_out_dir) {
    if (!image_out_dir.empty()) fs::create_directories(image_out_dir);
    EvalReport report;
    for (std::size_t i : dataset.indices_of(split)) {
        const Image pred = render_image(dataset.cameras[i], config, fields);
        ViewMetrics vm;
        vm.view_index = i;
        vm.psnr = psnr(pred, dataset.images[i]);
        vm.ssim = (pred.width >= 11 && pred.height >= 11) ? ssim(pred, dataset.images[i]) : 0.0;
        report.views.push_back(vm);
        report.mean_psnr += vm.psnr;
        report.mean_ssim += vm.ssim;
        if (!image_out_dir.empty()) {
            char name[48];
            std::snprintf(name, sizeof(name), "eval_view_%04zu.png", i);
            write_png(hstack(dataset.images[i], pred), (fs::path(image_out_dir) / name).string());
        }
    }
    if (!report.views.empty()) {
        report.mean_psnr /= static_cast<double>(report.views.size());
        report.mean_ssim /= static_cast<double>(report.views.size());
    }
    return report;
}

void write_metrics_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "view,psnr,ssim\n";
    char line[128];
    for (const ViewMetrics& vm : report.views) {
        std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f\n", vm.view_index, vm.psnr, vm.ssim);
        out << line;
    }
    std::snprintf(line, sizeof(line), "mean,%.6f,%.6f\n", report.mean_psnr, report.mean_ssim);
    out << line;
}

EvalReport cmd_eval(const PosedDataset& dataset, const std::string& run_dir,
                    const std::string& out_dir) {
    const TrainState state = load_run(run_dir);
    fs::create_directories(out_dir);
    EvalReport report = evaluate_split(state.field_set(), state.render_config(), dataset,
                                       Split::test, out_dir);
    write_metrics_csv(report, (fs::path(out_dir) / "metrics.csv").string());
    return report;
}

void cmd_render(const PosedDataset& dataset, const std::string& run_dir, Split split,
                const std::string& out_dir) {
    const TrainState state = load_run(run_dir);
    fs::create_directories(out_dir);
    const FieldSet fields = state.field_set();
    const RenderConfig rc = state.render_config();
    for (std::size_t i : dataset.indices_of(split)) {
        const Image pred = render_image(dataset.cameras[i], rc, fields);
        char name[48];
        std::snprintf(name, sizeof(name), "render_%04zu.png", i);
        write_png(pred, (fs::path(out_dir) / name).string());
    }
}

ExperimentConfig default_experiment_config(const std::string& experiment) {
    ExperimentConfig c;
    c.experiment = experiment;
    if (experiment == "ambiguity") {
        c.scene = "glossy";
        c.n_train = 50;
        c.n_test = 10;
        c.n_seeds = 1;
        c.iterations = 8000;
        c.eval_every = 2000;
        c.camera_radius = 3.0;
        c.fov_degrees = 40.0;
    } else if (experiment == "mlp_compare") {
        c.scene = "glossy";
        c.n_train = 20;
        c.n_test = 10;
        c.n_seeds = 3;
        c.iterations = 3000;
        c.eval_every = 1500;
        c.camera_radius = 3.0;
        c.fov_degrees = 40.0;
    } else if (experiment == "param_compare") {
        c.scene = "unbounded";
        c.n_train = 20;
        c.n_test = 10;
        c.n_seeds = 3;
        c.iterations = 3000;
        c.eval_every = 1500;
        c.n_coarse = 32;
        c.n_fine = 32;
        c.camera_radius = 1.0;
        c.fov_degrees = 60.0;
        c.oracle_samples = 16384;
    } else {
        throw std::invalid_argument("unknown experiment: " + experiment);
    }
    return c;
}

namespace {

struct RunMetrics {
    double train_psnr = 0.0;
    double test_psnr = 0.0;
    double test_ssim = 0.0;
};

RunMetrics train_and_score(const PosedDataset& dataset, const TrainConfig& config,
                           const std::string& run_dir) {
    auto [state, log] = cmd_train(dataset, config, run_dir);
    const FieldSet fields = state.field_set();
    const RenderConfig rc = state.render_config();
    const EvalReport train_report = evaluate_split(fields, rc, dataset, Split::train);
    const EvalReport test_report = evaluate_split(fields, rc, dataset, Split::test, run_dir);
    write_metrics_csv(test_report, (fs::path(run_dir) / "metrics.csv").string());
    return {train_report.mean_psnr, test_report.mean_psnr, test_report.mean_ssim};
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config) {
    ExperimentReport report;
    report.experiment = config.experiment;
    fs::create_directories(config.out_dir);

    SynthConfig synth;
    synth.scene = config.scene;
    synth.n_train = config.n_train;
    synth.n_test = config.n_test;
    synth.width = config.width;
    synth.height = config.height;
    synth.camera_radius = config.camera_radius;
    synth.fov_degrees = config.fov_degrees;
    synth.oracle_samples = config.oracle_samples;

    TrainConfig base;
    base.batch_rays = config.batch_rays;
    base.iterations = config.iterations;
    base.lr = config.lr;
    base.n_coarse = config.n_coarse;
    base.n_fine = config.n_fine;
    base.eval_every = config.eval_every;
    base.share_coarse_fine = true;

    if (config.experiment == "ambiguity") {
        // Frozen unit-sphere opacity between the object and the cameras;
        // only the radiance field trains.
        for (int s = 0; s < config.n_seeds; ++s) {
            const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(s);
            synth.seed = seed;
            const PosedDataset dataset = cmd_synth(
                synth, (fs::path(config.out_dir) / ("dataset_seed" + std::to_string(s))).string());

            TrainConfig tc = base;
            tc.mode = TrainMode::fixed_sphere_ambiguity;
            tc.seed = seed;
            tc.arch_fg = glossy_arch(FieldVariant::nerf_asymmetric, 3);
            tc.frozen_sigma = {FrozenOpacity::Kind::shell, 60.0, 1.0, 0.2};
            tc.t_near = config.camera_radius - 1.3;
            tc.t_far = config.camera_radius + 1.3;
            const RunMetrics m = train_and_score(
                dataset, tc,
                (fs::path(config.out_dir) / ("fixed_sphere_seed" + std::to_string(s))).string());
            report.rows.push_back(
                {"fixed_sphere", std::to_string(seed), m.train_psnr, m.test_psnr, m.test_ssim});
        }
    } else if (config.experiment == "mlp_compare") {
        for (int s = 0; s < config.n_seeds; ++s) {
            const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(s);
            synth.seed = seed;
            const PosedDataset dataset = cmd_synth(
                synth, (fs::path(config.out_dir) / ("dataset_seed" + std::to_string(s))).string());
            for (const FieldVariant variant :
                 {FieldVariant::nerf_asymmetric, FieldVariant::vanilla_symmetric}) {
                const std::string name = variant == FieldVariant::nerf_asymmetric
                                             ? "nerf_asymmetric"
                                             : "vanilla_symmetric";
                TrainConfig tc = base;
                tc.mode = TrainMode::bounded_nerf;
                tc.seed = seed;
                tc.arch_fg = glossy_arch(variant, 1);
                tc.t_near = config.camera_radius - 1.3;
                tc.t_far = config.camera_radius + 1.3;
                const RunMetrics m = train_and_score(
                    dataset, tc,
                    (fs::path(config.out_dir) / (name + "_seed" + std::to_string(s))).string());
                report.rows.push_back(
                    {name, std::to_string(seed), m.train_psnr, m.test_psnr, m.test_ssim});
            }
        }
        report.rows.push_back(mean_row(report.rows, "nerf_asymmetric"));
        report.rows.push_back(mean_row(report.rows, "vanilla_symmetric"));
    } else if (config.experiment == "param_compare") {
        synth.normalize = true;
        for (int s = 0; s < config.n_seeds; ++s) {
            const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(s);
            synth.seed = seed;
            const SynthResult sr = synth_with_scene(synth);
            save_dataset(sr.dataset,
                         (fs::path(config.out_dir) / ("dataset_seed" + std::to_string(s))).string());
            double max_cam = 0.0;
            for (const Camera& c : sr.dataset.cameras)
                max_cam = std::max(max_cam, c.position.norm());
            const double scene_far = sr.scene.far_bound(max_cam);

            // NeRF++: two volumes, n_coarse/n_fine per volume.
            {
                TrainConfig tc = base;
                tc.mode = TrainMode::nerfpp;
                tc.seed = seed;
                tc.arch_fg = nerf_mlp_architecture(FieldInput::euclidean_3d);
                tc.arch_bg = nerf_mlp_architecture(FieldInput::inverted_sphere_4d);
                const RunMetrics m = train_and_score(
                    sr.dataset, tc,
                    (fs::path(config.out_dir) / ("nerfpp_seed" + std::to_string(s))).string());
                report.rows.push_back(
                    {"nerfpp", std::to_string(seed), m.train_psnr, m.test_psnr, m.test_ssim});
            }
            // Bounded baseline with a scene-wide volume and doubled sample
            // counts, matching NeRF++'s total per-ray budget.
            {
                TrainConfig tc = base;
                tc.mode = TrainMode::bounded_nerf;
                tc.seed = seed;
                tc.arch_fg = nerf_mlp_architecture(FieldInput::euclidean_3d);
                tc.n_coarse = 2 * config.n_coarse;
                tc.n_fine = 2 * config.n_fine;
                tc.t_near = 0.02;
                tc.t_far = scene_far;
                const RunMetrics m = train_and_score(
                    sr.dataset, tc,
                    (fs::path(config.out_dir) / ("bounded_seed" + std::to_string(s))).string());
                report.rows.push_back(
                    {"bounded_nerf", std::to_string(seed), m.train_psnr, m.test_psnr, m.test_ssim});
            }
        }
        report.rows.push_back(mean_row(report.rows, "nerfpp"));
        report.rows.push_back(mean_row(report.rows, "bounded_nerf"));
    } else {
        throw std::invalid_argument("unknown experiment: " + config.experiment);
    }

    write_experiment_report(report, (fs::path(config.out_dir) / "report.csv").string());
    return report;
}

void write_experiment_report(const ExperimentReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "experiment,variant,seed,train_psnr,test_psnr,test_ssim\n";
    for (const ExperimentRow& row : report.rows) out << report.experiment << "," << format_row(row);
}

}  // namespace volray
