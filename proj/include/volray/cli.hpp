#pragma once

#include <string>
#include <vector>

#include "volray/metrics.hpp"
#include "volray/render.hpp"
#include "volray/scene.hpp"
#include "volray/train.hpp"

namespace volray {

struct ArchitectureMismatch : std::runtime_error {
    explicit ArchitectureMismatch(const std::string& what) : std::runtime_error(what) {}
};

/// Dataset synthesis: oracle-rendered views from hemisphere poses, train and
/// test poses interleaved deterministically.
struct SynthConfig {
    std::string scene = "glossy";
    int n_train = 20;
    int n_test = 10;
    std::uint64_t seed = 0;
    int width = 64, height = 64;
    double camera_radius = 3.0;
    double fov_degrees = 40.0;
    int oracle_samples = 4096;
    /// Rescale so all cameras end up within normalize_target of the origin
    /// (the unbounded-capture protocol). The scene is transformed with the
    /// same similarity so images are unchanged.
    bool normalize = false;
    double normalize_target = 0.125;
};

PosedDataset synth_dataset(const SynthConfig& config);
PosedDataset cmd_synth(const SynthConfig& config, const std::string& out_dir);

/// The training-run configuration is persisted next to the checkpoints so
/// eval/render can rebuild the exact model set.
void save_run_config(const TrainConfig& config, const std::string& dir);
TrainConfig load_run_config(const std::string& dir);

/// Full training command: fit + artifacts (checkpoints, run config, log.csv).
std::pair<TrainState, TrainLog> cmd_train(const PosedDataset& dataset, const TrainConfig& config,
                                          const std::string& out_dir);

/// Loads a training run for rendering/eval. Throws ArchitectureMismatch when
/// the checkpoints do not match the stored run config.
TrainState load_run(const std::string& run_dir);

struct ViewMetrics {
    std::size_t view_index = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};
struct EvalReport {
    std::vector<ViewMetrics> views;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

/// Renders every view of the split and scores it against ground truth.
/// When image_out_dir is non-empty, writes [ground truth | prediction]
/// side-by-side PNGs.
EvalReport evaluate_split(const FieldSet& fields, const RenderConfig& config,
                          const PosedDataset& dataset, Split split,
                          const std::string& image_out_dir = "");

/// metrics.csv: one row per view plus a trailing mean row.
void write_metrics_csv(const EvalReport& report, const std::string& path);

/// Eval command: test-split metrics + side-by-side renders for a finished
/// run directory.
EvalReport cmd_eval(const PosedDataset& dataset, const std::string& run_dir,
                    const std::string& out_dir);

/// Render command: writes one PNG per view of the chosen split.
void cmd_render(const PosedDataset& dataset, const std::string& run_dir, Split split,
                const std::string& out_dir);

/// Scripted experiments reproducing the paper's three comparisons at desk
/// scale. Every deterministic output lands under out_dir; report.csv is
/// byte-reproducible for a fixed seed.
struct ExperimentConfig {
    std::string experiment;  // "ambiguity" | "mlp_compare" | "param_compare"
    std::string scene;
    std::string out_dir = "experiment_out";
    std::uint64_t seed = 1;
    int n_seeds = 3;
    int width = 64, height = 64;
    int n_train = 20, n_test = 10;
    long iterations = 3000;
    int batch_rays = 256;
    int n_coarse = 48;
    int n_fine = 48;
    double lr = 5e-4;
    long eval_every = 1000;
    int oracle_samples = 4096;
    double camera_radius = 3.0;
    double fov_degrees = 40.0;
};

/// Experiment-specific defaults (scene, views, sampling budgets).
ExperimentConfig default_experiment_config(const std::string& experiment);

struct ExperimentRow {
    std::string variant;
    std::string seed_label;
    double train_psnr = 0.0;
    double test_psnr = 0.0;
    double test_ssim = 0.0;
};
struct ExperimentReport {
    std::string experiment;
    std::vector<ExperimentRow> rows;
};

ExperimentReport run_experiment(const ExperimentConfig& config);
void write_experiment_report(const ExperimentReport& report, const std::string& path);

}  // namespace volray
