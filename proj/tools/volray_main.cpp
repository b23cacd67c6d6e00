// volray — differentiable volume rendering toolkit.
//
// Subcommands: synth, train, render, eval, experiment. Every command with a
// --seed flag is bit-reproducible in its CSV/manifest outputs; exit codes are
// 0 success, 1 runtime/data error, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <string>

#include "volray/cli.hpp"

namespace {

using namespace volray;

struct TrainFlags {
    std::string dataset;
    std::string out = "train_out";
    std::string mode = "bounded_nerf";
    std::uint64_t seed = 0;
    long iters = 2000;
    int rays = 2048;
    int coarse = 128;
    int fine = 256;
    double lr = 5e-4;
    double t_near = 0.05;
    double t_far = 6.0;
    std::string variant = "nerf_asymmetric";
    bool share = true;
    long eval_every = 1000;
};

TrainConfig build_train_config(const TrainFlags& f) {
    TrainConfig c;
    const auto mode = train_mode_from_string(f.mode);
    if (!mode) throw CLI::ValidationError("--mode", "unknown mode " + f.mode);
    c.mode = *mode;
    c.seed = f.seed;
    c.iterations = f.iters;
    c.batch_rays = f.rays;
    c.n_coarse = f.coarse;
    c.n_fine = f.fine;
    c.lr = f.lr;
    c.t_near = f.t_near;
    c.t_far = f.t_far;
    c.eval_every = f.eval_every;
    c.share_coarse_fine = f.share;
    if (f.variant == "vanilla_symmetric") {
        c.arch_fg = vanilla_mlp_architecture(FieldInput::euclidean_3d);
    } else if (f.variant == "nerf_asymmetric") {
        c.arch_fg = nerf_mlp_architecture(FieldInput::euclidean_3d);
    } else {
        throw CLI::ValidationError("--variant", "unknown variant " + f.variant);
    }
    if (c.mode == TrainMode::fixed_sphere_ambiguity) {
        c.arch_fg.view_branch_depth = 3;
        c.arch_fg.view_branch_width = 64;
        c.frozen_sigma = {FrozenOpacity::Kind::shell, 60.0, 1.0, 0.2};
    }
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"differentiable volume rendering toolkit"};
    app.require_subcommand(1);
    app.set_config("--config");

    // ---- synth ----
    SynthConfig synth;
    std::string synth_out = "dataset";
    auto* cmd_synth_p = app.add_subcommand("synth", "render a synthetic posed dataset");
    cmd_synth_p->add_option("--scene", synth.scene, "scene preset (glossy|unbounded|smoke)")
        ->check(CLI::IsMember({"glossy", "unbounded", "smoke"}));
    cmd_synth_p->add_option("--ntrain", synth.n_train, "train view count");
    cmd_synth_p->add_option("--ntest", synth.n_test, "test view count");
    cmd_synth_p->add_option("--seed", synth.seed, "pose/seed stream");
    cmd_synth_p->add_option("--width", synth.width, "image width");
    cmd_synth_p->add_option("--height", synth.height, "image height");
    cmd_synth_p->add_option("--radius", synth.camera_radius, "camera hemisphere radius");
    cmd_synth_p->add_option("--fov", synth.fov_degrees, "field of view (degrees)");
    cmd_synth_p->add_option("--samples", synth.oracle_samples, "oracle samples per ray");
    cmd_synth_p->add_flag("--normalize", synth.normalize,
                          "rescale cameras into the radius-1/8 ball");
    cmd_synth_p->add_option("--out", synth_out, "output dataset directory");

    // ---- train ----
    TrainFlags tf;
    auto* cmd_train_p = app.add_subcommand("train", "fit radiance fields to a dataset");
    cmd_train_p->add_option("--dataset", tf.dataset, "dataset directory")->required();
    cmd_train_p->add_option("--out", tf.out, "run output directory");
    cmd_train_p
        ->add_option("--mode", tf.mode, "bounded_nerf|nerfpp|fixed_sphere_ambiguity")
        ->check(CLI::IsMember({"bounded_nerf", "nerfpp", "fixed_sphere_ambiguity"}));
    cmd_train_p->add_option("--seed", tf.seed, "training seed");
    cmd_train_p->add_option("--iters", tf.iters, "iterations");
    cmd_train_p->add_option("--rays", tf.rays, "rays per batch");
    cmd_train_p->add_option("--coarse", tf.coarse, "coarse samples per ray");
    cmd_train_p->add_option("--fine", tf.fine, "fine (importance) samples per ray");
    cmd_train_p->add_option("--lr", tf.lr, "learning rate");
    cmd_train_p->add_option("--tnear", tf.t_near, "bounded-mode near depth");
    cmd_train_p->add_option("--tfar", tf.t_far, "bounded-mode far depth");
    cmd_train_p
        ->add_option("--variant", tf.variant, "nerf_asymmetric|vanilla_symmetric")
        ->check(CLI::IsMember({"nerf_asymmetric", "vanilla_symmetric"}));
    cmd_train_p->add_flag("--share,!--no-share", tf.share, "share coarse/fine nets");
    cmd_train_p->add_option("--eval-every", tf.eval_every, "evaluation period");

    // ---- render ----
    std::string render_dataset, render_run, render_out = "renders", render_split = "test";
    auto* cmd_render_p = app.add_subcommand("render", "render dataset views from a checkpoint");
    cmd_render_p->add_option("--dataset", render_dataset, "dataset directory")->required();
    cmd_render_p->add_option("--run", render_run, "training run directory")->required();
    cmd_render_p->add_option("--split", render_split, "train|test")
        ->check(CLI::IsMember({"train", "test"}));
    cmd_render_p->add_option("--out", render_out, "output directory");

    // ---- eval ----
    std::string eval_dataset, eval_run, eval_out = "eval_out";
    auto* cmd_eval_p = app.add_subcommand("eval", "score test views against ground truth");
    cmd_eval_p->add_option("--dataset", eval_dataset, "dataset directory")->required();
    cmd_eval_p->add_option("--run", eval_run, "training run directory")->required();
    cmd_eval_p->add_option("--out", eval_out, "output directory");

    // ---- experiment ----
    std::string exp_name;
    ExperimentConfig exp;
    auto* cmd_exp_p = app.add_subcommand("experiment", "run a scripted comparison");
    cmd_exp_p->add_option("--name", exp_name, "ambiguity|mlp_compare|param_compare")
        ->required()
        ->check(CLI::IsMember({"ambiguity", "mlp_compare", "param_compare"}));
    cmd_exp_p->add_option("--out", exp.out_dir, "output directory");
    cmd_exp_p->add_option("--seed", exp.seed, "base seed");
    auto* exp_iters = cmd_exp_p->add_option("--iters", exp.iterations, "iterations per run");
    auto* exp_seeds = cmd_exp_p->add_option("--seeds", exp.n_seeds, "number of seeds");
    cmd_exp_p->add_option("--size", exp.width, "square image size");
    cmd_exp_p->add_option("--rays", exp.batch_rays, "rays per batch");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (cmd_synth_p->parsed()) {
            cmd_synth(synth, synth_out);
            std::printf("wrote dataset to %s\n", synth_out.c_str());
        } else if (cmd_train_p->parsed()) {
            const PosedDataset dataset = load_dataset(tf.dataset);
            const TrainConfig config = build_train_config(tf);
            auto [state, log] = cmd_train(dataset, config, tf.out);
            if (!log.entries.empty()) {
                const TrainLogEntry& last = log.entries.back();
                std::printf("final: iteration %ld loss %.6g test_psnr %.2f dB\n", last.iteration,
                            last.loss, last.test_psnr);
            }
            std::printf("run artifacts in %s\n", tf.out.c_str());
        } else if (cmd_render_p->parsed()) {
            const PosedDataset dataset = load_dataset(render_dataset);
            cmd_render(dataset, render_run, render_split == "train" ? Split::train : Split::test,
                       render_out);
            std::printf("renders in %s\n", render_out.c_str());
        } else if (cmd_eval_p->parsed()) {
            const PosedDataset dataset = load_dataset(eval_dataset);
            const EvalReport report = cmd_eval(dataset, eval_run, eval_out);
            std::printf("test views: %zu  mean psnr %.2f dB  mean ssim %.4f\n",
                        report.views.size(), report.mean_psnr, report.mean_ssim);
        } else if (cmd_exp_p->parsed()) {
            ExperimentConfig config = default_experiment_config(exp_name);
            config.out_dir = exp.out_dir;
            config.seed = exp.seed;
            if (exp_iters->count() > 0) config.iterations = exp.iterations;
            if (exp_seeds->count() > 0) config.n_seeds = exp.n_seeds;
            if (cmd_exp_p->count("--size") > 0) {
                config.width = exp.width;
                config.height = exp.width;
            }
            if (cmd_exp_p->count("--rays") > 0) config.batch_rays = exp.batch_rays;
            const ExperimentReport report = run_experiment(config);
            std::printf("experiment %s: %zu rows -> %s/report.csv\n", report.experiment.c_str(),
                        report.rows.size(), config.out_dir.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
