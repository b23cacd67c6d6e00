#include "volray/render.hpp"

#include <algorithm>
#include <cmath>

#include "volray/parallel.hpp"

namespace volray {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Vec3 col3(const MatrixXd& m, Index j) { return {m(0, j), m(1, j), m(2, j)}; }

MatrixXd inner_positions(const Ray& ray, const std::vector<double>& t_values) {
    MatrixXd pos(3, static_cast<Index>(t_values.size()));
    for (Index i = 0; i < pos.cols(); ++i) {
        const Vec3 p = ray.at(t_values[static_cast<std::size_t>(i)]);
        pos(0, i) = p.x;
        pos(1, i) = p.y;
        pos(2, i) = p.z;
    }
    return pos;
}

MatrixXd replicate_direction(const Vec3& d, Index n) {
    MatrixXd dir(3, n);
    dir.row(0).setConstant(d.x);
    dir.row(1).setConstant(d.y);
    dir.row(2).setConstant(d.z);
    return dir;
}

/// Sum of weight_i * color_i.
Vec3 weighted_color(const QuadratureWeights& qw, const MatrixXd& colors) {
    Vec3 out;
    for (Index i = 0; i < qw.weights.size(); ++i) out += col3(colors, i) * qw.weights(i);
    return out;
}

RayQuadrature evaluate_segment(const BatchedField& field, const MatrixXd& positions,
                               const MatrixXd& directions, std::vector<double> t_values,
                               std::vector<double> deltas, double incoming_T) {
    RayQuadrature q;
    q.t_values = std::move(t_values);
    q.deltas = std::move(deltas);
    FieldSamples fs = field.eval(positions, directions);
    q.sigmas = std::move(fs.sigma);
    q.colors = std::move(fs.color);
    VectorXd dv = Eigen::Map<const VectorXd>(q.deltas.data(), static_cast<Index>(q.deltas.size()));
    q.comp = quadrature_weights(q.sigmas, dv, incoming_T);
    return q;
}

}  // namespace

BatchedField batched_field(const FieldModel& model) {
    BatchedField f;
    f.position_dim = model.arch.position_dim();
    f.eval = [&model](const MatrixXd& pos, const MatrixXd& dir) {
        ForwardTrace t = field_forward_batch(model, pos, dir);
        return FieldSamples{std::move(t.sigma), std::move(t.color)};
    };
    return f;
}

std::vector<double> sample_segment(double t_near, double t_far, int n, bool jitter, Rng& rng) {
    if (!(t_near < t_far)) throw EmptyInterval();
    if (n < 1) throw std::invalid_argument("sample_segment: n must be >= 1");
    std::vector<double> t(static_cast<std::size_t>(n));
    const double width = (t_far - t_near) / n;
    for (int i = 0; i < n; ++i) {
        const double u = jitter ? rng.uniform() : 0.5;
        t[static_cast<std::size_t>(i)] = t_near + (i + u) * width;
    }
    return t;
}

std::vector<double> segment_deltas(const std::vector<double>& t_values, double t_near,
                                   double t_far) {
    const std::size_t n = t_values.size();
    std::vector<double> d(n);
    double prev_boundary = t_near;
    for (std::size_t i = 0; i < n; ++i) {
        const double next_boundary =
            i + 1 < n ? 0.5 * (t_values[i] + t_values[i + 1]) : t_far;
        d[i] = next_boundary - prev_boundary;
        prev_boundary = next_boundary;
    }
    return d;
}

QuadratureWeights quadrature_weights(const VectorXd& sigmas, const VectorXd& deltas,
                                     double incoming_T) {
    if (sigmas.size() != deltas.size())
        throw LengthMismatch("quadrature_weights: sigma/delta length mismatch");
    if (incoming_T < 0.0 || incoming_T > 1.0)
        throw std::invalid_argument("quadrature_weights: incoming transmittance outside [0,1]");
    const Index n = sigmas.size();
    QuadratureWeights qw;
    qw.alphas.resize(n);
    qw.transmittances.resize(n);
    qw.weights.resize(n);
    double transmittance = incoming_T;
    for (Index i = 0; i < n; ++i) {
        const double alpha = -std::expm1(-sigmas(i) * deltas(i));
        qw.alphas(i) = alpha;
        qw.transmittances(i) = transmittance;
        qw.weights(i) = transmittance * alpha;
        transmittance *= 1.0 - alpha;
    }
    qw.final_transmittance = transmittance;
    return qw;
}

RenderOutput render_ray_bounded(const BatchedField& field, const Ray& ray, double t_near,
                                double t_far, int n, RayQuadrature* detail) {
    Rng rng(0);
    std::vector<double> t = sample_segment(t_near, t_far, n, false, rng);
    std::vector<double> deltas = segment_deltas(t, t_near, t_far);
    MatrixXd pos = inner_positions(ray, t);
    RayQuadrature q = evaluate_segment(field, pos, replicate_direction(ray.direction, n),
                                       std::move(t), std::move(deltas), 1.0);
    RenderOutput out;
    out.fg_color = weighted_color(q.comp, q.colors);
    out.residual_transmittance = q.comp.final_transmittance;
    out.bg_color = {0.0, 0.0, 0.0};
    out.color = out.fg_color + out.residual_transmittance * out.bg_color;
    if (detail) *detail = std::move(q);
    return out;
}

RenderOutput render_ray_bounded(const FieldModel& field, const Ray& ray, double t_near,
                                double t_far, int n) {
    if (field.arch.input_kind != FieldInput::euclidean_3d)
        throw ShapeMismatch("render_ray_bounded needs a euclidean-input field");
    return render_ray_bounded(batched_field(field), ray, t_near, t_far, n);
}

Eigen::MatrixXd outer_sample_positions(const Ray& ray, const SphereCrossing& crossing,
                                       const std::vector<double>& s_values) {
    MatrixXd pos(4, static_cast<Index>(s_values.size()));
    for (std::size_t i = 0; i < s_values.size(); ++i) {
        const double inv_r = 1.0 - s_values[i];
        const Vec3 dir = outer_direction(crossing, ray, inv_r);
        const Index j = static_cast<Index>(i);
        pos(0, j) = dir.x;
        pos(1, j) = dir.y;
        pos(2, j) = dir.z;
        pos(3, j) = inv_r;
    }
    return pos;
}

RenderOutput render_ray_nerfpp(const BatchedField& fg, const BatchedField& bg, const Ray& ray,
                               int n_fg, int n_bg, RayQuadrature* fg_detail,
                               RayQuadrature* bg_detail) {
    const SphereCrossing crossing = intersect_unit_sphere(ray);
    Rng rng(0);

    std::vector<double> t = sample_segment(0.0, crossing.t_far, n_fg, false, rng);
    std::vector<double> td = segment_deltas(t, 0.0, crossing.t_far);
    MatrixXd inner_pos = inner_positions(ray, t);
    RayQuadrature inner = evaluate_segment(fg, inner_pos, replicate_direction(ray.direction, n_fg),
                                           std::move(t), std::move(td), 1.0);

    // Outer samples in s = 1 - 1/r: ascending s runs from the sphere outward,
    // and the s-measure equals the inverse-radius measure.
    std::vector<double> s = sample_segment(0.0, 1.0, n_bg, false, rng);
    std::vector<double> sd = segment_deltas(s, 0.0, 1.0);
    MatrixXd outer_pos = outer_sample_positions(ray, crossing, s);
    RayQuadrature outer = evaluate_segment(bg, outer_pos, replicate_direction(ray.direction, n_bg),
                                           std::move(s), std::move(sd), 1.0);

    RenderOutput out;
    out.fg_color = weighted_color(inner.comp, inner.colors);
    out.residual_transmittance = inner.comp.final_transmittance;
    out.bg_color = weighted_color(outer.comp, outer.colors);
    out.color = out.fg_color + out.residual_transmittance * out.bg_color;
    if (fg_detail) *fg_detail = std::move(inner);
    if (bg_detail) *bg_detail = std::move(outer);
    return out;
}

RenderOutput render_ray_nerfpp(const FieldModel& fg, const FieldModel& bg, const Ray& ray,
                               int n_fg, int n_bg) {
    if (fg.arch.input_kind != FieldInput::euclidean_3d)
        throw ShapeMismatch("foreground field must take euclidean input");
    if (bg.arch.input_kind != FieldInput::inverted_sphere_4d)
        throw ShapeMismatch("background field must take inverted-sphere input");
    return render_ray_nerfpp(batched_field(fg), batched_field(bg), ray, n_fg, n_bg);
}

std::vector<double> importance_sample(const std::vector<double>& bin_edges,
                                      const std::vector<double>& coarse_weights, int n, Rng& rng) {
    if (bin_edges.size() != coarse_weights.size() + 1)
        throw LengthMismatch("importance_sample: need one more edge than weights");
    if (n < 1) throw std::invalid_argument("importance_sample: n must be >= 1");
    const std::size_t bins = coarse_weights.size();
    if (bins == 0) throw DegenerateBins("importance_sample: no bins");

    constexpr double kFloor = 1e-5;
    std::vector<double> cumulative(bins + 1, 0.0);
    for (std::size_t i = 0; i < bins; ++i) {
        const double width = bin_edges[i + 1] - bin_edges[i];
        if (!(width > 0.0)) throw DegenerateBins("importance_sample: non-increasing bin edges");
        if (coarse_weights[i] < 0.0)
            throw std::invalid_argument("importance_sample: negative weight");
        cumulative[i + 1] = cumulative[i] + (coarse_weights[i] + kFloor) * width;
    }
    const double total = cumulative.back();

    std::vector<double> out(static_cast<std::size_t>(n));
    std::size_t bin = 0;
    for (int j = 0; j < n; ++j) {
        const double u = (j + rng.uniform()) / n;  // stratified, ascending
        const double target = u * total;
        while (bin + 1 < bins && cumulative[bin + 1] <= target) ++bin;
        const double mass = cumulative[bin + 1] - cumulative[bin];
        const double frac = mass > 0.0 ? (target - cumulative[bin]) / mass : 0.5;
        out[static_cast<std::size_t>(j)] =
            bin_edges[bin] + frac * (bin_edges[bin + 1] - bin_edges[bin]);
    }
    return out;
}

std::vector<double> hierarchical_samples(const std::vector<double>& coarse_t,
                                         const QuadratureWeights& coarse, double t_near,
                                         double t_far, int n_fine, Rng& rng) {
    const std::size_t n = coarse_t.size();
    std::vector<double> edges(n + 1);
    edges[0] = t_near;
    for (std::size_t i = 0; i + 1 < n; ++i) edges[i + 1] = 0.5 * (coarse_t[i] + coarse_t[i + 1]);
    edges[n] = t_far;
    std::vector<double> weights(n);
    for (std::size_t i = 0; i < n; ++i) weights[i] = coarse.weights(static_cast<Index>(i));

    std::vector<double> fine = importance_sample(edges, weights, n_fine, rng);
    std::vector<double> merged;
    merged.reserve(n + fine.size());
    std::merge(coarse_t.begin(), coarse_t.end(), fine.begin(), fine.end(),
               std::back_inserter(merged));
    return merged;
}

RenderOutput render_pixel(const FieldSet& fields, const RenderConfig& config, const Ray& ray,
                          Rng& rng) {
    const bool two_volume = fields.nerfpp();
    const FieldModel* fg_fine = fields.fg_fine ? fields.fg_fine : fields.fg_coarse;
    const FieldModel* bg_fine = fields.bg_fine ? fields.bg_fine : fields.bg_coarse;

    if (!two_volume) {
        const BatchedField coarse = batched_field(*fields.fg_coarse);
        std::vector<double> t =
            sample_segment(config.t_near, config.t_far, config.n_coarse, config.jitter, rng);
        std::vector<double> td = segment_deltas(t, config.t_near, config.t_far);
        MatrixXd cpos = inner_positions(ray, t);
        RayQuadrature cq =
            evaluate_segment(coarse, cpos, replicate_direction(ray.direction, config.n_coarse),
                             std::move(t), std::move(td), 1.0);
        RenderOutput out;
        out.fg_color = weighted_color(cq.comp, cq.colors);
        out.residual_transmittance = cq.comp.final_transmittance;
        out.color = out.fg_color;
        if (config.n_fine <= 0) return out;

        std::vector<double> ft = hierarchical_samples(cq.t_values, cq.comp, config.t_near,
                                                      config.t_far, config.n_fine, rng);
        std::vector<double> fd = segment_deltas(ft, config.t_near, config.t_far);
        const BatchedField fine = batched_field(*fg_fine);
        MatrixXd fpos = inner_positions(ray, ft);
        MatrixXd fdir = replicate_direction(ray.direction, fpos.cols());
        RayQuadrature fq =
            evaluate_segment(fine, fpos, fdir, std::move(ft), std::move(fd), 1.0);
        out.fg_color = weighted_color(fq.comp, fq.colors);
        out.residual_transmittance = fq.comp.final_transmittance;
        out.color = out.fg_color;
        return out;
    }

    const SphereCrossing crossing = intersect_unit_sphere(ray);
    const BatchedField fgc = batched_field(*fields.fg_coarse);
    const BatchedField bgc = batched_field(*fields.bg_coarse);

    std::vector<double> t = sample_segment(0.0, crossing.t_far, config.n_coarse, config.jitter, rng);
    std::vector<double> td = segment_deltas(t, 0.0, crossing.t_far);
    MatrixXd cpos = inner_positions(ray, t);
    RayQuadrature inner_c = evaluate_segment(fgc, cpos,
                                             replicate_direction(ray.direction, config.n_coarse),
                                             std::move(t), std::move(td), 1.0);
    std::vector<double> s = sample_segment(0.0, 1.0, config.n_coarse, config.jitter, rng);
    std::vector<double> sd = segment_deltas(s, 0.0, 1.0);
    MatrixXd spos = outer_sample_positions(ray, crossing, s);
    RayQuadrature outer_c = evaluate_segment(bgc, spos,
                                             replicate_direction(ray.direction, config.n_coarse),
                                             std::move(s), std::move(sd), 1.0);

    RenderOutput out;
    out.fg_color = weighted_color(inner_c.comp, inner_c.colors);
    out.residual_transmittance = inner_c.comp.final_transmittance;
    out.bg_color = weighted_color(outer_c.comp, outer_c.colors);
    out.color = out.fg_color + out.residual_transmittance * out.bg_color;
    if (config.n_fine <= 0) return out;

    std::vector<double> ft = hierarchical_samples(inner_c.t_values, inner_c.comp, 0.0,
                                                  crossing.t_far, config.n_fine, rng);
    std::vector<double> fdl = segment_deltas(ft, 0.0, crossing.t_far);
    const BatchedField fgf = batched_field(*fg_fine);
    MatrixXd fpos = inner_positions(ray, ft);
    MatrixXd fdir = replicate_direction(ray.direction, fpos.cols());
    RayQuadrature inner_f =
        evaluate_segment(fgf, fpos, fdir, std::move(ft), std::move(fdl), 1.0);

    std::vector<double> fs = hierarchical_samples(outer_c.t_values, outer_c.comp, 0.0, 1.0,
                                                  config.n_fine, rng);
    std::vector<double> fsd = segment_deltas(fs, 0.0, 1.0);
    const BatchedField bgf = batched_field(*bg_fine);
    MatrixXd fspos = outer_sample_positions(ray, crossing, fs);
    MatrixXd fsdir = replicate_direction(ray.direction, fspos.cols());
    RayQuadrature outer_f =
        evaluate_segment(bgf, fspos, fsdir, std::move(fs), std::move(fsd), 1.0);

    out.fg_color = weighted_color(inner_f.comp, inner_f.colors);
    out.residual_transmittance = inner_f.comp.final_transmittance;
    out.bg_color = weighted_color(outer_f.comp, outer_f.colors);
    out.color = out.fg_color + out.residual_transmittance * out.bg_color;
    return out;
}

Image render_image(const Camera& camera, const RenderConfig& config, const FieldSet& fields) {
    if (!fields.fg_coarse) throw std::invalid_argument("render_image: missing foreground field");
    camera.validate();
    Image im = Image::zeros(camera.width, camera.height);
    parallel_chunks(camera.height, 2, [&](std::int64_t y0, std::int64_t y1) {
        for (std::int64_t y = y0; y < y1; ++y) {
            for (int x = 0; x < camera.width; ++x) {
                Rng rng = Rng::derive(config.seed, {static_cast<std::uint64_t>(y),
                                                    static_cast<std::uint64_t>(x)});
                const Ray ray = generate_ray(camera, x + 0.5, static_cast<double>(y) + 0.5);
                const RenderOutput ro = render_pixel(fields, config, ray, rng);
                im.set_pixel(x, static_cast<int>(y),
                             {std::clamp(ro.color.x, 0.0, 1.0), std::clamp(ro.color.y, 0.0, 1.0),
                              std::clamp(ro.color.z, 0.0, 1.0)});
            }
        }
    });
    return im;
}

}  // namespace volray
