#include <cmath>
#include <set>

#include "doctest.h"
#include "demf/augment.hpp"
#include "demf/error.hpp"
#include "demf/rng.hpp"

using namespace demf;

namespace {

TrainingSlice make_slice(const std::string& id, Label label, const Image& img) {
    TrainingSlice s;
    s.slice_id = id;
    s.label = label;
    s.split = Split::train;
    s.fused = FusedSlice{img, FusionStrategy::pcae, id};
    return s;
}

std::vector<TrainingSlice> table_counts(int cancerous, int healthy, int size) {
    std::vector<TrainingSlice> out;
    Rng rng(1);
    for (int i = 0; i < cancerous + healthy; ++i) {
        Image img(size, size);
        for (float& v : img.pixels()) v = static_cast<float>(rng.uniform());
        out.push_back(make_slice("s" + std::to_string(i), i < cancerous ? Label::cancerous : Label::healthy, img));
    }
    return out;
}

Image disk(int size, double radius, double cy, double cx) {
    Image img(size, size);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c)
            img(r, c) = std::hypot(r - cy, c - cx) <= radius ? 1.0f : 0.0f;
    return img;
}

std::pair<double, double> centroid(const Image& img) {
    double s = 0, sr = 0, sc = 0;
    for (int r = 0; r < img.rows(); ++r)
        for (int c = 0; c < img.cols(); ++c) {
            s += img(r, c);
            sr += r * img(r, c);
            sc += c * img(r, c);
        }
    return {sr / s, sc / s};
}

} // namespace

TEST_CASE("fold arithmetic: 64 + 362 in, 1088 + 1086 out") {
    const auto in = table_counts(64, 362, 8);
    AugmentPolicy policy;
    policy.seed = 3;
    const auto out = augment_training_set(in, policy);
    int pos = 0, neg = 0;
    std::set<std::string> ids;
    for (const auto& s : out.slices) {
        (s.label == Label::cancerous ? pos : neg)++;
        ids.insert(s.slice_id);
        CHECK(s.fused.image.rows() == 8);
        CHECK(s.split == Split::train);
    }
    CHECK(pos == 1088);
    CHECK(neg == 1086);
    CHECK(ids.size() == out.slices.size());
    CHECK(out.log.size() == 64 * 16 + 362 * 2);
    for (const auto& t : out.log) {
        CHECK(std::abs(t.parameter) <= policy.range(t.kind));
        CHECK(t.slice_id.rfind(t.parent_id + "#aug", 0) == 0);
    }
    for (const auto& s : out.slices)
        if (s.augmentation_parent) CHECK(s.slice_id.rfind(*s.augmentation_parent, 0) == 0);
}

TEST_CASE("unit folds return the input set") {
    const auto in = table_counts(3, 4, 6);
    AugmentPolicy policy;
    policy.fold_cancerous = policy.fold_healthy = 1;
    const auto out = augment_training_set(in, policy);
    REQUIRE(out.slices.size() == in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        CHECK(out.slices[i].slice_id == in[i].slice_id);
        CHECK(out.slices[i].fused.image == in[i].fused.image);
    }
    CHECK(out.log.empty());

    policy.include_original = false;
    policy.fold_cancerous = 2;
    const auto fresh = augment_training_set(in, policy);
    CHECK(fresh.slices.size() == 3 * 2 + 4);
    for (const auto& s : fresh.slices) CHECK(s.augmentation_parent.has_value());
}

TEST_CASE("augmentation is reproducible per seed") {
    const auto in = table_counts(4, 4, 8);
    AugmentPolicy policy;
    policy.seed = 10;
    const auto a = augment_training_set(in, policy), b = augment_training_set(in, policy);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].kind == b.log[i].kind);
        CHECK(a.log[i].parameter == b.log[i].parameter);
    }
    for (std::size_t i = 0; i < a.slices.size(); ++i) CHECK(a.slices[i].fused.image == b.slices[i].fused.image);
    policy.seed = 11;
    const auto c = augment_training_set(in, policy);
    bool differs = false;
    for (std::size_t i = 0; i < a.log.size(); ++i) differs |= a.log[i].parameter != c.log[i].parameter;
    CHECK(differs);

    // A slice's stream does not depend on its neighbours.
    std::vector<TrainingSlice> reordered(in.rbegin(), in.rend());
    policy.seed = 10;
    const auto d = augment_training_set(reordered, policy);
    auto params_of = [](const AugmentResult& r, const std::string& id) {
        std::vector<double> out;
        for (const auto& t : r.log)
            if (t.parent_id == id) out.push_back(t.parameter);
        return out;
    };
    CHECK(params_of(d, "s0") == params_of(a, "s0"));
    CHECK(params_of(d, "s5") == params_of(a, "s5"));
}

TEST_CASE("rotating a centred disk conserves its mass") {
    const Image img = disk(41, 9.0, 20.0, 20.0);
    const double mass = img.sum();
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
        const double angle = rng.uniform(-10.0, 10.0);
        const double rotated = apply_transform(img, TransformKind::rotation, angle).sum();
        CHECK(std::abs(rotated - mass) / mass < 0.02);
    }
}

TEST_CASE("transforms move content in the documented direction") {
    const int n = 41;
    const double cy = 20.0, cx = 20.0;
    // Zero parameters are identities.
    const Image blob = disk(n, 2.5, 20.0, 30.0);
    for (int k = 0; k < kTransformKinds; ++k)
        CHECK(apply_transform(blob, static_cast<TransformKind>(k), 0.0) == blob);

    // Positive angle: counter-clockwise on screen (rows grow downwards).
    const double t = 10.0 * M_PI / 180.0;
    const auto [rr, rc] = centroid(apply_transform(blob, TransformKind::rotation, 10.0));
    CHECK(rr == doctest::Approx(cy - std::sin(t) * 10.0).epsilon(0.02));
    CHECK(rc == doctest::Approx(cx + std::cos(t) * 10.0).epsilon(0.02));

    const auto [wr, wc] = centroid(apply_transform(blob, TransformKind::width_shift, 0.1));
    CHECK(wc == doctest::Approx(30.0 + 4.1).epsilon(0.01));
    CHECK(wr == doctest::Approx(20.0).epsilon(0.01));
    const auto [hr, hc] = centroid(apply_transform(blob, TransformKind::height_shift, -0.1));
    CHECK(hr == doctest::Approx(20.0 - 4.1).epsilon(0.01));

    const Image centre = disk(n, 6.0, cy, cx);
    const double zoomed = apply_transform(centre, TransformKind::zoom, 0.2).sum();
    CHECK(zoomed / centre.sum() == doctest::Approx(1.44).epsilon(0.08));

    // Shear leaves the centre row alone and slides rows proportionally to
    // their offset from it.
    const Image sheared = apply_transform(blob, TransformKind::shear, 0.2);
    for (int c = 0; c < n; ++c) CHECK(sheared(20, c) == blob(20, c));
}

TEST_CASE("test-split slices are rejected") {
    auto in = table_counts(2, 2, 6);
    in[1].split = Split::test;
    CHECK_THROWS_AS(augment_training_set(in, AugmentPolicy{}), ContaminationError);
    in[1].split = Split::train;
    in[1].augmentation_parent = "s0";
    CHECK_THROWS_AS(augment_training_set(in, AugmentPolicy{}), ContaminationError);
}

TEST_CASE("policy validation") {
    AugmentPolicy p;
    CHECK_NOTHROW(p.validate());
    p.fold_healthy = 0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = {};
    p.rotation_deg = -1.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = {};
    p.zoom = 1.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
}
