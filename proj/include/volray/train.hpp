#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "volray/field.hpp"
#include "volray/render.hpp"
#include "volray/scene.hpp"

namespace volray {

struct NonFiniteLoss : std::runtime_error {
    explicit NonFiniteLoss(const std::string& what) : std::runtime_error(what) {}
};

enum class TrainMode { bounded_nerf, nerfpp, fixed_sphere_ambiguity };

std::string to_string(TrainMode mode);
std::optional<TrainMode> train_mode_from_string(const std::string& name);

struct TrainConfig {
    TrainMode mode = TrainMode::bounded_nerf;
    int batch_rays = 2048;
    long iterations = 0;
    double lr = 5e-4;
    int n_coarse = 128;
    int n_fine = 256;  // 0 disables the fine pass
    std::uint64_t seed = 0;
    long eval_every = 1000;

    FieldArchitecture arch_fg = nerf_mlp_architecture(FieldInput::euclidean_3d);
    FieldArchitecture arch_bg = nerf_mlp_architecture(FieldInput::inverted_sphere_4d);
    /// One net per volume instead of separate coarse/fine pairs.
    bool share_coarse_fine = false;
    /// Integration segment for the bounded modes.
    double t_near = 0.05, t_far = 6.0;
    /// Stratified sampling during training (inner and outer segments alike).
    bool jitter = true;
    /// Analytic opacity used in fixed_sphere_ambiguity mode.
    FrozenOpacity frozen_sigma{FrozenOpacity::Kind::shell, 40.0, 1.0, 0.15};
    /// Views rendered per periodic evaluation.
    int eval_train_views = 2;
    int eval_test_views = 3;

    void validate() const;
};

struct TrainLogEntry {
    long iteration = 0;
    double loss = 0.0;
    double train_psnr = 0.0;
    double test_psnr = 0.0;
    double test_ssim = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<TrainLogEntry> entries;

    /// CSV columns: iteration,loss,train_psnr,test_psnr,test_ssim,seconds.
    /// The seconds column is wall time and is the one column that is not
    /// reproducible across runs.
    void write_csv(const std::string& path) const;
};

struct RayBatch {
    std::vector<Ray> rays;
    Eigen::MatrixXd targets;  // 3 x B
};

/// Models plus optimizer state for one training run. For bounded modes only
/// the fg pair exists; with share_coarse_fine the fine slots alias coarse.
struct TrainState {
    TrainConfig config;
    std::vector<FieldModel> models;
    std::vector<AdamState> optimizers;
    std::vector<std::string> roles;  // "fg_coarse", "fg_fine", "bg_coarse", "bg_fine"
    long iteration = 0;

    FieldModel& by_role(const std::string& role);
    const FieldModel& by_role(const std::string& role) const;
    bool has_role(const std::string& role) const;
    /// View for rendering: fine nets where present, coarse otherwise.
    FieldSet field_set() const;
    RenderConfig render_config() const;
};

TrainState make_train_state(const TrainConfig& config);

/// Mean over rays and channels of the squared difference.
double mse_loss(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& target);

/// Deterministic uniform ray batch over the train split of the dataset.
RayBatch sample_ray_batch(const PosedDataset& dataset, const TrainConfig& config, long iteration);

/// Loss of one batch (coarse pass + fine pass) and, when grads_out is given,
/// the gradients with respect to every model parameter. Throws NonFiniteLoss
/// with diagnostics if the loss leaves the reals. Sample positions follow
/// the stream derived from (seed, state.iteration, ray index), so the value
/// is a pure function of the state and batch.
double compute_gradients(const TrainState& state, const RayBatch& batch,
                         std::vector<GradientSet>* grads_out);

/// One gradient step (coarse loss + fine loss).
double train_step(TrainState& state, const RayBatch& batch);

/// Renders the given views with the current models and reports metric means.
struct EvalResult {
    double train_psnr = 0.0;
    double test_psnr = 0.0;
    double test_ssim = 0.0;
};
EvalResult evaluate_state(const TrainState& state, const PosedDataset& dataset,
                          int max_train_views, int max_test_views);

/// Full training loop: train_step for config.iterations with periodic
/// evaluation appended to the log; checkpoints written to out_dir (when
/// non-empty) at every eval and at the end.
std::pair<TrainState, TrainLog> fit(const PosedDataset& dataset, const TrainConfig& config,
                                    const std::string& out_dir = "");

/// Continues a loaded state up to config.iterations (used for resume).
TrainLog fit_continue(TrainState& state, const PosedDataset& dataset,
                      const std::string& out_dir = "");

/// Model + optimizer checkpointing for a whole training state.
void save_train_state(const TrainState& state, const std::string& dir);
TrainState load_train_state(const TrainConfig& config, const std::string& dir);

}  // namespace volray
