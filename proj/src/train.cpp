#include "volray/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "volray/metrics.hpp"
#include "volray/parallel.hpp"

namespace volray {

namespace {

namespace fs = std::filesystem;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr std::uint64_t kBatchStream = 0x62617463ULL;
constexpr std::uint64_t kRayStream = 0x72617973ULL;
constexpr std::uint64_t kInitStream = 0x6d6f646cULL;
constexpr std::uint64_t kEvalSeed = 0x6576616cULL;

Vec3 col3(const MatrixXd& m, Index j) { return {m(0, j), m(1, j), m(2, j)}; }

/// Gradient of the composited color of one segment with respect to the
/// per-sample densities and colors.
///
/// out = sum_i w_i c_i + T_end * tail, with w_i = T_i (1 - e^{-sigma_i d_i}).
/// For the inner volume of the two-volume composite, tail is the outer
/// integral so the residual-transmittance coupling of the composite is part
/// of the same chain.
void segment_backward(const QuadratureWeights& qw, const VectorXd& deltas, const MatrixXd& colors,
                      const Vec3& g, const Vec3& tail, Index offset, VectorXd& d_sigma,
                      MatrixXd& d_color) {
    const Index n = qw.weights.size();
    Vec3 suffix = tail * qw.final_transmittance;
    for (Index i = n - 1; i >= 0; --i) {
        const Vec3 ci = col3(colors, i);
        const double wi = qw.weights(i);
        d_color(0, offset + i) = g.x * wi;
        d_color(1, offset + i) = g.y * wi;
        d_color(2, offset + i) = g.z * wi;
        const double t_next = qw.transmittances(i) * (1.0 - qw.alphas(i));
        const Vec3 dA = ci * t_next - suffix;
        d_sigma(offset + i) = deltas(i) * g.dot(dA);
        suffix += ci * wi;
    }
}

struct ChunkResult {
    double sq_err_coarse = 0.0;
    double sq_err_fine = 0.0;
    std::vector<GradientSet> grads;  // parallel to TrainState::models
};

MatrixXd replicate_direction(const Vec3& d, Index n) {
    MatrixXd dir(3, n);
    dir.row(0).setConstant(d.x);
    dir.row(1).setConstant(d.y);
    dir.row(2).setConstant(d.z);
    return dir;
}

void fill_inner_columns(MatrixXd& pos, MatrixXd& dir, Index offset, const Ray& ray,
                        const std::vector<double>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        const Vec3 p = ray.at(t[i]);
        const Index j = offset + static_cast<Index>(i);
        pos(0, j) = p.x;
        pos(1, j) = p.y;
        pos(2, j) = p.z;
        dir(0, j) = ray.direction.x;
        dir(1, j) = ray.direction.y;
        dir(2, j) = ray.direction.z;
    }
}

void fill_outer_columns(MatrixXd& pos, MatrixXd& dir, Index offset, const Ray& ray,
                        const SphereCrossing& crossing, const std::vector<double>& s) {
    const MatrixXd cols = outer_sample_positions(ray, crossing, s);
    pos.middleCols(offset, cols.cols()) = cols;
    dir.middleCols(offset, cols.cols()) = replicate_direction(ray.direction, cols.cols());
}

}  // namespace

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::bounded_nerf: return "bounded_nerf";
        case TrainMode::nerfpp: return "nerfpp";
        case TrainMode::fixed_sphere_ambiguity: return "fixed_sphere_ambiguity";
    }
    return "?";
}

std::optional<TrainMode> train_mode_from_string(const std::string& name) {
    if (name == "bounded_nerf") return TrainMode::bounded_nerf;
    if (name == "nerfpp") return TrainMode::nerfpp;
    if (name == "fixed_sphere_ambiguity") return TrainMode::fixed_sphere_ambiguity;
    return std::nullopt;
}

void TrainConfig::validate() const {
    if (batch_rays < 1) throw std::invalid_argument("batch_rays must be positive");
    if (iterations < 0) throw std::invalid_argument("iterations must be non-negative");
    if (lr < 0.0) throw std::invalid_argument("learning rate must be non-negative");
    if (n_coarse < 1) throw std::invalid_argument("n_coarse must be positive");
    if (n_fine < 0) throw std::invalid_argument("n_fine must be non-negative");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be positive");
    if (!(t_near < t_far)) throw std::invalid_argument("t_near must be below t_far");
    arch_fg.validate();
    if (arch_fg.input_kind != FieldInput::euclidean_3d)
        throw InvalidArchitecture("foreground field must take euclidean input");
    if (mode == TrainMode::nerfpp) {
        arch_bg.validate();
        if (arch_bg.input_kind != FieldInput::inverted_sphere_4d)
            throw InvalidArchitecture("background field must take inverted-sphere input");
    }
    if (mode == TrainMode::fixed_sphere_ambiguity && frozen_sigma.density <= 0.0)
        throw std::invalid_argument("fixed-sphere mode needs a positive frozen density");
}

FieldModel& TrainState::by_role(const std::string& role) {
    for (std::size_t i = 0; i < roles.size(); ++i)
        if (roles[i] == role) return models[i];
    throw std::invalid_argument("no model with role " + role);
}

const FieldModel& TrainState::by_role(const std::string& role) const {
    for (std::size_t i = 0; i < roles.size(); ++i)
        if (roles[i] == role) return models[i];
    throw std::invalid_argument("no model with role " + role);
}

bool TrainState::has_role(const std::string& role) const {
    return std::find(roles.begin(), roles.end(), role) != roles.end();
}

FieldSet TrainState::field_set() const {
    FieldSet f;
    f.fg_coarse = &by_role("fg_coarse");
    f.fg_fine = has_role("fg_fine") ? &by_role("fg_fine") : f.fg_coarse;
    if (has_role("bg_coarse")) {
        f.bg_coarse = &by_role("bg_coarse");
        f.bg_fine = has_role("bg_fine") ? &by_role("bg_fine") : f.bg_coarse;
    }
    return f;
}

RenderConfig TrainState::render_config() const {
    RenderConfig rc;
    rc.n_coarse = config.n_coarse;
    rc.n_fine = config.n_fine;
    rc.t_near = config.t_near;
    rc.t_far = config.t_far;
    rc.jitter = false;
    rc.seed = kEvalSeed;
    return rc;
}

TrainState make_train_state(const TrainConfig& config) {
    config.validate();
    TrainState st;
    st.config = config;

    FieldArchitecture fg = config.arch_fg;
    st.roles.push_back("fg_coarse");
    if (!config.share_coarse_fine && config.n_fine > 0) st.roles.push_back("fg_fine");
    if (config.mode == TrainMode::nerfpp) {
        st.roles.push_back("bg_coarse");
        if (!config.share_coarse_fine && config.n_fine > 0) st.roles.push_back("bg_fine");
    }
    for (std::size_t i = 0; i < st.roles.size(); ++i) {
        const bool is_bg = st.roles[i].rfind("bg", 0) == 0;
        FieldModel m = init_field(is_bg ? config.arch_bg : fg,
                                  Rng::derive(config.seed, {kInitStream, i}).next_u64());
        if (config.mode == TrainMode::fixed_sphere_ambiguity && !is_bg)
            m.frozen_opacity = config.frozen_sigma;
        st.models.push_back(std::move(m));
        st.optimizers.push_back(make_adam_state(st.models.back()));
    }
    return st;
}

double mse_loss(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& target) {
    if (predicted.rows() != target.rows() || predicted.cols() != target.cols())
        throw ShapeMismatch("mse_loss: shape mismatch");
    const MatrixXd diff = predicted - target;
    return diff.squaredNorm() / static_cast<double>(diff.size());
}

RayBatch sample_ray_batch(const PosedDataset& dataset, const TrainConfig& config, long iteration) {
    const std::vector<std::size_t> train = dataset.indices_of(Split::train);
    if (train.empty()) throw std::invalid_argument("dataset has no train views");
    Rng rng = Rng::derive(config.seed, {kBatchStream, static_cast<std::uint64_t>(iteration)});
    RayBatch batch;
    batch.rays.reserve(static_cast<std::size_t>(config.batch_rays));
    batch.targets.resize(3, config.batch_rays);
    for (int i = 0; i < config.batch_rays; ++i) {
        const std::size_t view = train[rng.below(train.size())];
        const Camera& cam = dataset.cameras[view];
        const int px = static_cast<int>(rng.below(static_cast<std::uint64_t>(cam.width)));
        const int py = static_cast<int>(rng.below(static_cast<std::uint64_t>(cam.height)));
        batch.rays.push_back(generate_ray(cam, px + 0.5, py + 0.5));
        const Vec3 t = dataset.images[view].pixel(px, py);
        batch.targets(0, i) = t.x;
        batch.targets(1, i) = t.y;
        batch.targets(2, i) = t.z;
    }
    return batch;
}

namespace {

struct PassOutput {
    std::vector<Vec3> composite;   // per ray
    std::vector<Vec3> bg_color;    // per ray (nerfpp)
    std::vector<double> residual;  // per ray
};

/// Forward + backward of one pass (coarse or fine) over the rays of a chunk.
/// Returns the per-ray composites; accumulates gradients into result.grads.
PassOutput run_pass(const TrainState& st, const RayBatch& batch, std::int64_t begin,
                    std::int64_t end, int fg_index, int bg_index,
                    const std::vector<std::vector<double>>& fg_t,
                    const std::vector<std::vector<double>>& bg_t,
                    const std::vector<SphereCrossing>& crossings, ChunkResult& result,
                    std::vector<QuadratureWeights>* fg_qw_out,
                    std::vector<QuadratureWeights>* bg_qw_out, double* sq_err_out) {
    const TrainConfig& cfg = st.config;
    const bool two_volume = cfg.mode == TrainMode::nerfpp;
    const std::int64_t rays = end - begin;
    const Index n_fg = static_cast<Index>(fg_t[0].size());
    const Index total_fg = static_cast<Index>(rays) * n_fg;

    const FieldModel& fg_model = st.models[static_cast<std::size_t>(fg_index)];
    MatrixXd fg_pos(3, total_fg), fg_dir(3, total_fg);
    std::vector<std::vector<double>> fg_deltas(static_cast<std::size_t>(rays));
    for (std::int64_t r = 0; r < rays; ++r) {
        const Ray& ray = batch.rays[static_cast<std::size_t>(begin + r)];
        const double far = two_volume ? crossings[static_cast<std::size_t>(r)].t_far : cfg.t_far;
        const double near = two_volume ? 0.0 : cfg.t_near;
        fg_deltas[static_cast<std::size_t>(r)] =
            segment_deltas(fg_t[static_cast<std::size_t>(r)], near, far);
        fill_inner_columns(fg_pos, fg_dir, static_cast<Index>(r) * n_fg, ray,
                           fg_t[static_cast<std::size_t>(r)]);
    }
    ForwardTrace fg_trace = field_forward_batch(fg_model, fg_pos, fg_dir);

    ForwardTrace bg_trace;
    Index n_bg = 0;
    std::vector<std::vector<double>> bg_deltas;
    const FieldModel* bg_model = nullptr;
    if (two_volume) {
        bg_model = &st.models[static_cast<std::size_t>(bg_index)];
        n_bg = static_cast<Index>(bg_t[0].size());
        const Index total_bg = static_cast<Index>(rays) * n_bg;
        MatrixXd bg_pos(4, total_bg), bg_dir(3, total_bg);
        bg_deltas.resize(static_cast<std::size_t>(rays));
        for (std::int64_t r = 0; r < rays; ++r) {
            const Ray& ray = batch.rays[static_cast<std::size_t>(begin + r)];
            bg_deltas[static_cast<std::size_t>(r)] =
                segment_deltas(bg_t[static_cast<std::size_t>(r)], 0.0, 1.0);
            fill_outer_columns(bg_pos, bg_dir, static_cast<Index>(r) * n_bg, ray,
                               crossings[static_cast<std::size_t>(r)],
                               bg_t[static_cast<std::size_t>(r)]);
        }
        bg_trace = field_forward_batch(*bg_model, bg_pos, bg_dir);
    }

    PassOutput out;
    out.composite.resize(static_cast<std::size_t>(rays));
    out.bg_color.resize(static_cast<std::size_t>(rays));
    out.residual.resize(static_cast<std::size_t>(rays));

    VectorXd fg_dsigma = VectorXd::Zero(total_fg);
    MatrixXd fg_dcolor = MatrixXd::Zero(3, total_fg);
    VectorXd bg_dsigma;
    MatrixXd bg_dcolor;
    if (two_volume) {
        bg_dsigma = VectorXd::Zero(static_cast<Index>(rays) * n_bg);
        bg_dcolor = MatrixXd::Zero(3, static_cast<Index>(rays) * n_bg);
    }

    const double batch_scale = 2.0 / (3.0 * static_cast<double>(batch.rays.size()));
    double sq_err = 0.0;

    for (std::int64_t r = 0; r < rays; ++r) {
        const Index off_fg = static_cast<Index>(r) * n_fg;
        const std::size_t rs = static_cast<std::size_t>(r);
        const VectorXd deltas_fg = Eigen::Map<const VectorXd>(fg_deltas[rs].data(), n_fg);
        const QuadratureWeights qw_fg =
            quadrature_weights(fg_trace.sigma.segment(off_fg, n_fg), deltas_fg, 1.0);

        Vec3 fg_color;
        for (Index i = 0; i < n_fg; ++i)
            fg_color += col3(fg_trace.color, off_fg + i) * qw_fg.weights(i);

        Vec3 bg_color;
        QuadratureWeights qw_bg;
        if (two_volume) {
            const Index off_bg = static_cast<Index>(r) * n_bg;
            const VectorXd deltas_bg = Eigen::Map<const VectorXd>(bg_deltas[rs].data(), n_bg);
            qw_bg = quadrature_weights(bg_trace.sigma.segment(off_bg, n_bg), deltas_bg, 1.0);
            for (Index i = 0; i < n_bg; ++i)
                bg_color += col3(bg_trace.color, off_bg + i) * qw_bg.weights(i);
        }

        const Vec3 composite = fg_color + bg_color * qw_fg.final_transmittance;
        const Vec3 target = col3(batch.targets, static_cast<Index>(begin + r));
        const Vec3 err = composite - target;
        sq_err += err.squared_norm();
        const Vec3 g = err * batch_scale;

        segment_backward(qw_fg, deltas_fg, fg_trace.color.middleCols(off_fg, n_fg), g, bg_color,
                         off_fg, fg_dsigma, fg_dcolor);
        if (two_volume) {
            const Index off_bg = static_cast<Index>(r) * n_bg;
            const VectorXd deltas_bg = Eigen::Map<const VectorXd>(bg_deltas[rs].data(), n_bg);
            segment_backward(qw_bg, deltas_bg, bg_trace.color.middleCols(off_bg, n_bg),
                             g * qw_fg.final_transmittance, {0, 0, 0}, off_bg, bg_dsigma,
                             bg_dcolor);
        }

        out.composite[rs] = composite;
        out.bg_color[rs] = bg_color;
        out.residual[rs] = qw_fg.final_transmittance;
        if (fg_qw_out) (*fg_qw_out)[rs] = qw_fg;
        if (bg_qw_out) (*bg_qw_out)[rs] = qw_bg;
    }

    field_backward_batch(fg_model, fg_trace, fg_dsigma, fg_dcolor,
                         result.grads[static_cast<std::size_t>(fg_index)]);
    if (two_volume)
        field_backward_batch(*bg_model, bg_trace, bg_dsigma, bg_dcolor,
                             result.grads[static_cast<std::size_t>(bg_index)]);
    *sq_err_out = sq_err;
    return out;
}

ChunkResult process_chunk(const TrainState& st, const RayBatch& batch, std::int64_t begin,
                          std::int64_t end) {
    const TrainConfig& cfg = st.config;
    const bool two_volume = cfg.mode == TrainMode::nerfpp;
    const std::int64_t rays = end - begin;

    ChunkResult result;
    result.grads.reserve(st.models.size());
    for (const FieldModel& m : st.models) result.grads.push_back(zero_gradients(m));

    const int fgc = 0;
    const int fgf = st.has_role("fg_fine") ? 1 : 0;
    int bgc = -1, bgf = -1;
    if (two_volume) {
        bgc = st.has_role("fg_fine") ? 2 : 1;
        bgf = st.has_role("bg_fine") ? bgc + 1 : bgc;
    }

    std::vector<SphereCrossing> crossings(static_cast<std::size_t>(rays));
    std::vector<std::vector<double>> fg_t(static_cast<std::size_t>(rays));
    std::vector<std::vector<double>> bg_t(static_cast<std::size_t>(rays));
    for (std::int64_t r = 0; r < rays; ++r) {
        const std::size_t rs = static_cast<std::size_t>(r);
        const Ray& ray = batch.rays[static_cast<std::size_t>(begin + r)];
        const std::uint64_t ray_id = static_cast<std::uint64_t>(begin + r);
        Rng rng = Rng::derive(cfg.seed,
                              {kRayStream, static_cast<std::uint64_t>(st.iteration), ray_id, 0});
        if (two_volume) {
            crossings[rs] = intersect_unit_sphere(ray);
            fg_t[rs] = sample_segment(0.0, crossings[rs].t_far, cfg.n_coarse, cfg.jitter, rng);
            bg_t[rs] = sample_segment(0.0, 1.0, cfg.n_coarse, cfg.jitter, rng);
        } else {
            fg_t[rs] = sample_segment(cfg.t_near, cfg.t_far, cfg.n_coarse, cfg.jitter, rng);
        }
    }

    std::vector<QuadratureWeights> fg_qw(static_cast<std::size_t>(rays));
    std::vector<QuadratureWeights> bg_qw(static_cast<std::size_t>(rays));
    run_pass(st, batch, begin, end, fgc, bgc, fg_t, bg_t, crossings, result, &fg_qw, &bg_qw,
             &result.sq_err_coarse);

    if (cfg.n_fine > 0) {
        std::vector<std::vector<double>> fg_ft(static_cast<std::size_t>(rays));
        std::vector<std::vector<double>> bg_ft(static_cast<std::size_t>(rays));
        for (std::int64_t r = 0; r < rays; ++r) {
            const std::size_t rs = static_cast<std::size_t>(r);
            const std::uint64_t ray_id = static_cast<std::uint64_t>(begin + r);
            Rng rng = Rng::derive(
                cfg.seed, {kRayStream, static_cast<std::uint64_t>(st.iteration), ray_id, 1});
            const double far = two_volume ? crossings[rs].t_far : cfg.t_far;
            const double near = two_volume ? 0.0 : cfg.t_near;
            fg_ft[rs] = hierarchical_samples(fg_t[rs], fg_qw[rs], near, far, cfg.n_fine, rng);
            if (two_volume)
                bg_ft[rs] = hierarchical_samples(bg_t[rs], bg_qw[rs], 0.0, 1.0, cfg.n_fine, rng);
        }
        run_pass(st, batch, begin, end, fgf, bgf, fg_ft, bg_ft, crossings, result, nullptr,
                 nullptr, &result.sq_err_fine);
    }
    return result;
}

}  // namespace

double compute_gradients(const TrainState& state, const RayBatch& batch,
                         std::vector<GradientSet>* grads_out) {
    const TrainConfig& cfg = state.config;
    const std::int64_t rays = static_cast<std::int64_t>(batch.rays.size());
    if (batch.targets.cols() != rays || batch.targets.rows() != 3)
        throw ShapeMismatch("train_step: target shape does not match rays");

    constexpr std::int64_t kGrain = 32;
    std::vector<ChunkResult> chunks(chunk_count(rays, kGrain));
    parallel_chunks_indexed(rays, kGrain,
                            [&](std::size_t ci, std::int64_t b, std::int64_t e) {
                                chunks[ci] = process_chunk(state, batch, b, e);
                            });

    // Deterministic reduce in chunk order.
    double sq_coarse = 0.0, sq_fine = 0.0;
    std::vector<GradientSet> grads;
    grads.reserve(state.models.size());
    for (const FieldModel& m : state.models) grads.push_back(zero_gradients(m));
    for (ChunkResult& c : chunks) {
        sq_coarse += c.sq_err_coarse;
        sq_fine += c.sq_err_fine;
        for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += c.grads[i];
    }

    const double denom = 3.0 * static_cast<double>(rays);
    double loss = sq_coarse / denom;
    if (cfg.n_fine > 0) loss += sq_fine / denom;
    if (!std::isfinite(loss))
        throw NonFiniteLoss("non-finite loss at iteration " + std::to_string(state.iteration) +
                            " (coarse " + std::to_string(sq_coarse) + ", fine " +
                            std::to_string(sq_fine) + ")");
    if (grads_out) *grads_out = std::move(grads);
    return loss;
}

double train_step(TrainState& state, const RayBatch& batch) {
    std::vector<GradientSet> grads;
    const double loss = compute_gradients(state, batch, &grads);
    for (std::size_t i = 0; i < state.models.size(); ++i)
        adam_step(state.models[i], grads[i], state.optimizers[i], state.config.lr);
    return loss;
}

EvalResult evaluate_state(const TrainState& state, const PosedDataset& dataset,
                          int max_train_views, int max_test_views) {
    const FieldSet fields = state.field_set();
    const RenderConfig rc = state.render_config();

    auto subset = [](const std::vector<std::size_t>& all, int k) {
        std::vector<std::size_t> out;
        if (all.empty() || k <= 0) return out;
        const int n = std::min<int>(k, static_cast<int>(all.size()));
        for (int j = 0; j < n; ++j)
            out.push_back(all[static_cast<std::size_t>(j) * all.size() / static_cast<std::size_t>(n)]);
        return out;
    };

    EvalResult ev;
    int count = 0;
    for (std::size_t i : subset(dataset.indices_of(Split::train), max_train_views)) {
        const Image im = render_image(dataset.cameras[i], rc, fields);
        ev.train_psnr += psnr(im, dataset.images[i]);
        ++count;
    }
    if (count > 0) ev.train_psnr /= count;

    count = 0;
    for (std::size_t i : subset(dataset.indices_of(Split::test), max_test_views)) {
        const Image im = render_image(dataset.cameras[i], rc, fields);
        ev.test_psnr += psnr(im, dataset.images[i]);
        // ssim needs an 11-pixel window; tiny smoke images report 0
        ev.test_ssim += (im.width >= 11 && im.height >= 11) ? ssim(im, dataset.images[i]) : 0.0;
        ++count;
    }
    if (count > 0) {
        ev.test_psnr /= count;
        ev.test_ssim /= count;
    }
    return ev;
}

void TrainLog::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "iteration,loss,train_psnr,test_psnr,test_ssim,seconds\n";
    char line[256];
    for (const TrainLogEntry& e : entries) {
        std::snprintf(line, sizeof(line), "%ld,%.10g,%.6f,%.6f,%.6f,%.3f\n", e.iteration, e.loss,
                      e.train_psnr, e.test_psnr, e.test_ssim, e.seconds);
        out << line;
    }
}

TrainLog fit_continue(TrainState& state, const PosedDataset& dataset, const std::string& out_dir) {
    const TrainConfig& cfg = state.config;
    TrainLog log;
    if (!out_dir.empty()) fs::create_directories(out_dir);
    const auto t0 = std::chrono::steady_clock::now();

    while (state.iteration < cfg.iterations) {
        const RayBatch batch = sample_ray_batch(dataset, cfg, state.iteration);
        const double loss = train_step(state, batch);
        state.iteration += 1;

        const bool at_eval = state.iteration % cfg.eval_every == 0;
        const bool at_end = state.iteration == cfg.iterations;
        if (at_eval || at_end) {
            const EvalResult ev =
                evaluate_state(state, dataset, cfg.eval_train_views, cfg.eval_test_views);
            TrainLogEntry entry;
            entry.iteration = state.iteration;
            entry.loss = loss;
            entry.train_psnr = ev.train_psnr;
            entry.test_psnr = ev.test_psnr;
            entry.test_ssim = ev.test_ssim;
            entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            log.entries.push_back(entry);
            if (!out_dir.empty()) {
                save_train_state(state, out_dir);
                log.write_csv((fs::path(out_dir) / "log.csv").string());
            }
        }
    }
    if (!out_dir.empty()) {
        save_train_state(state, out_dir);
        log.write_csv((fs::path(out_dir) / "log.csv").string());
    }
    return log;
}

std::pair<TrainState, TrainLog> fit(const PosedDataset& dataset, const TrainConfig& config,
                                    const std::string& out_dir) {
    TrainState state = make_train_state(config);
    TrainLog log = fit_continue(state, dataset, out_dir);
    return {std::move(state), std::move(log)};
}

namespace {

constexpr char kAdamMagic[] = "VOLRAYADAM1\n";

void save_adam(const AdamState& s, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path);
    out.write(kAdamMagic, sizeof(kAdamMagic) - 1);
    const std::uint64_t step = static_cast<std::uint64_t>(s.step);
    out.write(reinterpret_cast<const char*>(&step), 8);
    for (const auto& list : {s.m, s.v})
        for (const MatrixXd& m : list)
            out.write(reinterpret_cast<const char*>(m.data()),
                      static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
    if (!out) throw CheckpointError("write failed for " + path);
}

void load_adam(AdamState& s, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path);
    char magic[sizeof(kAdamMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kAdamMagic, sizeof(magic)) != 0)
        throw CheckpointError(path + " is not an optimizer state file");
    std::uint64_t step = 0;
    in.read(reinterpret_cast<char*>(&step), 8);
    s.step = static_cast<long>(step);
    for (auto* list : {&s.m, &s.v})
        for (MatrixXd& m : *list) {
            in.read(reinterpret_cast<char*>(m.data()),
                    static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
            if (!in) throw CheckpointError("truncated optimizer state in " + path);
        }
}

}  // namespace

void save_train_state(const TrainState& state, const std::string& dir) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < state.models.size(); ++i) {
        const std::string base = (fs::path(dir) / state.roles[i]).string();
        save_checkpoint(state.models[i], base + ".ckpt", state.config.seed, state.iteration);
        save_adam(state.optimizers[i], base + ".adam");
    }
}

TrainState load_train_state(const TrainConfig& config, const std::string& dir) {
    TrainState state = make_train_state(config);
    long iteration = 0;
    for (std::size_t i = 0; i < state.models.size(); ++i) {
        const std::string base = (fs::path(dir) / state.roles[i]).string();
        Checkpoint ck = load_checkpoint(base + ".ckpt");
        if (!(ck.model.arch == state.models[i].arch))
            throw CheckpointError("checkpoint architecture does not match config for role " +
                                  state.roles[i]);
        state.models[i] = std::move(ck.model);
        state.optimizers[i] = make_adam_state(state.models[i]);
        load_adam(state.optimizers[i], base + ".adam");
        iteration = ck.iteration;
    }
    state.iteration = iteration;
    return state;
}

}  // namespace volray
