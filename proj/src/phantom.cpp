#include "demf/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "demf/error.hpp"
#include "demf/rng.hpp"

namespace demf {

namespace {

struct Ellipse {
    double cy, cx, ry, rx;

    // Soft membership with a roughly one-pixel transition band.
    double membership(double y, double x) const {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        const double d = std::sqrt(dy * dy + dx * dx);
        return std::clamp(0.5 + (1.0 - d) * std::min(ry, rx), 0.0, 1.0);
    }
    bool contains(double y, double x, double margin) const {
        const double dy = (y - cy) / std::max(ry - margin, 1e-6);
        const double dx = (x - cx) / std::max(rx - margin, 1e-6);
        return dy * dy + dx * dx <= 1.0;
    }
};

struct Wave {
    double amp, fy, fx, phase;
};

struct Anatomy {
    Ellipse body;
    Ellipse lungs[2];
    std::vector<Wave> texture;
    double tissue, lung;
};

Anatomy sample_anatomy(Rng& rng, int size) {
    const double s = size;
    Anatomy a;
    const double cy = s / 2 + rng.uniform(-0.02, 0.02) * s;
    const double cx = s / 2 + rng.uniform(-0.02, 0.02) * s;
    a.body = {cy, cx, 0.36 * s * rng.uniform(0.95, 1.05), 0.46 * s * rng.uniform(0.95, 1.05)};
    for (int side = 0; side < 2; ++side) {
        const double sign = side == 0 ? -1.0 : 1.0;
        a.lungs[side] = {cy - 0.02 * s, cx + sign * 0.2 * s, 0.25 * s * rng.uniform(0.92, 1.08),
                         0.13 * s * rng.uniform(0.92, 1.08)};
    }
    for (int i = 0; i < 3; ++i)
        a.texture.push_back({0.015, rng.uniform(1.0, 3.0) / s, rng.uniform(1.0, 3.0) / s,
                             rng.uniform(0.0, 2.0 * M_PI)});
    a.tissue = rng.uniform(0.30, 0.34);
    a.lung = rng.uniform(0.06, 0.10);
    return a;
}

double texture_at(const Anatomy& a, double y, double x) {
    double t = 0.0;
    for (const auto& w : a.texture) t += w.amp * std::sin(2.0 * M_PI * (w.fy * y + w.fx * x) + w.phase);
    return t;
}

// Uniform point inside one of the lungs, at least `margin` from its edge.
std::pair<double, double> point_in_lung(const Anatomy& a, Rng& rng, double margin) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const Ellipse& lung = a.lungs[rng.below(2)];
        const double y = rng.uniform(lung.cy - lung.ry, lung.cy + lung.ry);
        const double x = rng.uniform(lung.cx - lung.rx, lung.cx + lung.rx);
        if (lung.contains(y, x, margin)) return {y, x};
    }
    return {a.lungs[0].cy, a.lungs[0].cx};
}

Anomaly sample_lesion(const Anatomy& a, const PhantomConfig& cfg, Rng& rng) {
    Anomaly l;
    l.radius = rng.uniform(cfg.lesion_radius_min, cfg.lesion_radius_max);
    std::tie(l.row, l.col) = point_in_lung(a, rng, l.radius + 1.0);
    l.intensity = rng.uniform(0.55, 0.70);
    return l;
}

Anomaly hotspot_near(const Anomaly& lesion, const PhantomConfig& cfg, Rng& rng) {
    const double jitter_r = 0.3 * lesion.radius * std::sqrt(rng.uniform());
    const double jitter_t = rng.uniform(0.0, 2.0 * M_PI);
    return {lesion.row + jitter_r * std::sin(jitter_t), lesion.col + jitter_r * std::cos(jitter_t),
            lesion.radius, cfg.hotspot_intensity * rng.uniform(0.85, 1.0)};
}

Anomaly free_hotspot(const Anatomy& a, const PhantomConfig& cfg, Rng& rng) {
    const double radius = rng.uniform(cfg.lesion_radius_min, cfg.lesion_radius_max);
    const auto [y, x] = point_in_lung(a, rng, radius + 1.0);
    return {y, x, radius, cfg.hotspot_intensity * rng.uniform(0.85, 1.0)};
}

void paint_lesion(Image& ct, const Anomaly& l) {
    for (int r = 0; r < ct.rows(); ++r)
        for (int c = 0; c < ct.cols(); ++c) {
            const double d = std::hypot(r - l.row, c - l.col);
            const double m = std::clamp(0.5 + (l.radius - d), 0.0, 1.0);
            if (m > 0.0) ct(r, c) = static_cast<float>(ct(r, c) * (1.0 - m) + l.intensity * m);
        }
}

void add_gaussian(Image& img, double cy, double cx, double sigma, double amp) {
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int r = 0; r < img.rows(); ++r)
        for (int c = 0; c < img.cols(); ++c) {
            const double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
            img(r, c) += static_cast<float>(amp * std::exp(-d2 * inv));
        }
}

void paint_hotspot(Image& pet, const Anomaly& h) {
    add_gaussian(pet, h.row, h.col, std::max(1.0, 0.7 * h.radius), h.intensity);
}

std::string encode(const std::vector<Anomaly>& list) {
    std::ostringstream os;
    os.precision(6);
    for (std::size_t i = 0; i < list.size(); ++i) {
        if (i) os << ';';
        os << list[i].row << ',' << list[i].col << ',' << list[i].radius << ',' << list[i].intensity;
    }
    return os.str();
}

PhantomSample generate_one(const PhantomConfig& cfg, int index) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
    const int n = cfg.image_size;
    const bool cancerous = index < cfg.num_cancerous;
    const Anatomy a = sample_anatomy(rng, n);

    PhantomSample out;
    Image ct(n, n), pet(n, n);
    const double pet_body = rng.uniform(0.05, 0.07);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            const double body = a.body.membership(r, c);
            const double lung = std::max(a.lungs[0].membership(r, c), a.lungs[1].membership(r, c));
            const double tex = texture_at(a, r, c);
            const double tissue = a.tissue + tex;
            const double air = a.lung + 0.5 * tex;
            ct(r, c) = static_cast<float>(body * ((1.0 - lung) * tissue + lung * air));
            pet(r, c) = static_cast<float>(body * ((1.0 - lung) * pet_body + lung * 0.02));
        }
    // Mediastinal uptake between the lungs plus a few small metabolic blobs.
    add_gaussian(pet, a.body.cy + 0.05 * n, a.body.cx, 0.07 * n, rng.uniform(0.30, 0.40));
    const int blobs = static_cast<int>(rng.below(3));
    for (int i = 0; i < blobs; ++i) {
        const double y = a.body.cy + rng.uniform(0.15, 0.30) * n;
        const double x = a.body.cx + rng.uniform(-0.3, 0.3) * n;
        add_gaussian(pet, y, x, rng.uniform(0.02, 0.04) * n, rng.uniform(0.10, 0.25));
    }

    if (cancerous) {
        const Anomaly lesion = sample_lesion(a, cfg, rng);
        const Anomaly hot = hotspot_near(lesion, cfg, rng);
        out.ct_lesions.push_back(lesion);
        out.pet_hotspots.push_back(hot);
        const int r0 = std::max(0, static_cast<int>(std::floor(lesion.row - lesion.radius)));
        const int c0 = std::max(0, static_cast<int>(std::floor(lesion.col - lesion.radius)));
        const int r1 = std::min(n - 1, static_cast<int>(std::ceil(lesion.row + lesion.radius)));
        const int c1 = std::min(n - 1, static_cast<int>(std::ceil(lesion.col + lesion.radius)));
        out.pair.tumor_bbox = BoundingBox{r0, c0, r1, c1};
    } else if (rng.bernoulli(cfg.decoy_rate)) {
        if (rng.bernoulli(0.5))
            out.ct_lesions.push_back(sample_lesion(a, cfg, rng));
        else
            out.pet_hotspots.push_back(free_hotspot(a, cfg, rng));
    }
    for (const auto& l : out.ct_lesions) paint_lesion(ct, l);
    for (const auto& h : out.pet_hotspots) paint_hotspot(pet, h);

    for (float& v : ct.pixels()) v = std::clamp(v + static_cast<float>(cfg.noise_sigma * rng.normal()), 0.0f, 1.0f);
    for (float& v : pet.pixels()) v = std::clamp(v + static_cast<float>(cfg.noise_sigma * rng.normal()), 0.0f, 1.0f);

    char id[64];
    std::snprintf(id, sizeof id, "phantom_%06d", index);
    out.pair.ct = std::move(ct);
    out.pair.pet = std::move(pet);
    out.pair.label = cancerous ? Label::cancerous : Label::healthy;
    out.pair.slice_id = id;
    out.pair.modality_meta = {{"source", "phantom"},
                              {"seed", std::to_string(cfg.seed)},
                              {"index", std::to_string(index)},
                              {"ct_lesions", encode(out.ct_lesions)},
                              {"pet_hotspots", encode(out.pet_hotspots)}};
    return out;
}

} // namespace

void PhantomConfig::validate() const {
    if (image_size < 32) throw ConfigError("phantom: image_size must be >= 32");
    if (num_cancerous < 0 || num_healthy < 0) throw ConfigError("phantom: counts must be >= 0");
    if (!(decoy_rate >= 0.0 && decoy_rate <= 1.0)) throw ConfigError("phantom: decoy_rate must lie in [0,1]");
    if (!(lesion_radius_min > 0.0 && lesion_radius_min <= lesion_radius_max &&
          lesion_radius_max < image_size / 4.0))
        throw ConfigError("phantom: lesion_radius_range must be positive and below image_size/4");
    if (!(hotspot_intensity > 0.0 && hotspot_intensity <= 1.0))
        throw ConfigError("phantom: hotspot_intensity must lie in (0,1]");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("phantom: noise_sigma must be >= 0");
}

std::vector<PhantomSample> generate_phantom_samples(const PhantomConfig& config) {
    config.validate();
    std::vector<PhantomSample> out;
    const int total = config.num_cancerous + config.num_healthy;
    out.reserve(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) out.push_back(generate_one(config, i));
    return out;
}

std::vector<SlicePair> generate_phantom(const PhantomConfig& config) {
    auto samples = generate_phantom_samples(config);
    std::vector<SlicePair> out;
    out.reserve(samples.size());
    for (auto& s : samples) out.push_back(std::move(s.pair));
    return out;
}

Label fused_label(const PhantomSample& sample) {
    for (const auto& l : sample.ct_lesions)
        for (const auto& h : sample.pet_hotspots)
            if (std::hypot(h.row - l.row, h.col - l.col) <= l.radius) return Label::cancerous;
    return Label::healthy;
}

double summary_intensity(const Image& img) {
    if (img.empty()) throw DataError("summary_intensity: empty image");
    double best = -1.0;
    for (int r = 0; r < img.rows(); ++r)
        for (int c = 0; c < img.cols(); ++c) {
            double s = 0.0;
            int n = 0;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= img.rows() || cc < 0 || cc >= img.cols()) continue;
                    s += img(rr, cc);
                    ++n;
                }
            best = std::max(best, s / n);
        }
    return best;
}

double best_threshold_accuracy(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw DataError("best_threshold_accuracy: scores and labels must be non-empty and equal length");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    const std::size_t n = scores.size();
    std::size_t positives = 0;
    for (int l : labels) positives += l == 1;
    // Constant rules first, then every cut between distinct scores.
    std::size_t pos_above = positives, neg_above = n - positives;
    std::size_t best = std::max(positives, n - positives);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[order[i]] == 1) --pos_above; else --neg_above;
        if (i + 1 < n && scores[order[i + 1]] == scores[order[i]]) continue;
        const std::size_t neg_below = (n - positives) - neg_above;
        const std::size_t pos_below = positives - pos_above;
        best = std::max(best, pos_above + neg_below);  // predict 1 above t
        best = std::max(best, pos_below + neg_above);  // predict 1 below t
    }
    return static_cast<double>(best) / static_cast<double>(n);
}

ModalityAccuracy single_modality_bayes_gap(const std::vector<SlicePair>& pairs) {
    std::vector<int> labels;
    std::vector<double> ct, pet;
    for (const auto& p : pairs) {
        labels.push_back(to_int(p.label));
        ct.push_back(summary_intensity(p.ct));
        pet.push_back(summary_intensity(p.pet));
    }
    const auto positives = std::count(labels.begin(), labels.end(), 1);
    if (positives == 0 || positives == static_cast<long>(labels.size()))
        throw DegenerateInputError("single_modality_bayes_gap: both labels must be present");
    return {best_threshold_accuracy(ct, labels), best_threshold_accuracy(pet, labels)};
}

} // namespace demf
