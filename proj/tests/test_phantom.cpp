#include <cmath>
#include <algorithm>
#include <set>

#include "doctest.h"
#include "demf/error.hpp"
#include "demf/phantom.hpp"
#include "demf/rng.hpp"

using namespace demf;

namespace {

PhantomConfig small_config(std::uint64_t seed, int pos, int neg) {
    PhantomConfig c;
    c.seed = seed;
    c.num_cancerous = pos;
    c.num_healthy = neg;
    c.image_size = 48;
    c.lesion_radius_min = 2.0;
    c.lesion_radius_max = 4.0;
    return c;
}

double distance(const Anomaly& a, const Anomaly& b) { return std::hypot(a.row - b.row, a.col - b.col); }

} // namespace

TEST_CASE("phantom counts and bookkeeping") {
    CHECK(generate_phantom(small_config(7, 0, 0)).empty());

    const auto pairs = generate_phantom(small_config(7, 10, 40));
    REQUIRE(pairs.size() == 50);
    std::set<std::string> ids;
    int boxes = 0;
    for (const auto& p : pairs) {
        CHECK_NOTHROW(validate(p));
        ids.insert(p.slice_id);
        boxes += p.tumor_bbox.has_value();
        CHECK(p.ct.rows() == 48);
        CHECK(p.modality_meta.at("source") == "phantom");
    }
    CHECK(ids.size() == 50);
    CHECK(boxes == 10);
}

TEST_CASE("phantom generation is deterministic per seed") {
    const auto a = generate_phantom(small_config(3, 4, 6));
    const auto b = generate_phantom(small_config(3, 4, 6));
    const auto c = generate_phantom(small_config(4, 4, 6));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].ct == b[i].ct);
        CHECK(a[i].pet == b[i].pet);
        CHECK(a[i].label == b[i].label);
    }
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs |= !(a[i].ct == c[i].ct);
    CHECK(differs);
}

TEST_CASE("cancerous hotspots are co-located and decoys never are") {
    auto cfg = small_config(11, 30, 60);
    cfg.decoy_rate = 1.0;
    const auto samples = generate_phantom_samples(cfg);
    for (const auto& s : samples) {
        CHECK(fused_label(s) == s.pair.label);
        if (s.pair.label == Label::cancerous) {
            REQUIRE(s.pet_hotspots.size() >= 1);
            REQUIRE(s.pair.tumor_bbox);
            const auto& h = s.pet_hotspots.front();
            CHECK(s.pair.tumor_bbox->contains(static_cast<int>(std::lround(h.row)), static_cast<int>(std::lround(h.col))));
        } else {
            // decoy_rate 1: exactly one single-modality anomaly.
            CHECK(s.ct_lesions.size() + s.pet_hotspots.size() == 1);
            for (const auto& l : s.ct_lesions)
                for (const auto& h : s.pet_hotspots) CHECK(distance(l, h) > l.radius);
        }
    }

    cfg.decoy_rate = 0.0;
    for (const auto& s : generate_phantom_samples(cfg))
        if (s.pair.label == Label::healthy) CHECK(s.ct_lesions.size() + s.pet_hotspots.size() == 0);
}

TEST_CASE("decoys cap single-modality accuracy") {
    auto clean = small_config(5, 60, 120);
    clean.decoy_rate = 0.0;
    const auto gap0 = single_modality_bayes_gap(generate_phantom(clean));
    CHECK(gap0.ct_only >= 0.98);
    CHECK(gap0.pet_only >= 0.98);

    auto decoys = small_config(5, 100, 500);
    decoys.decoy_rate = 0.5;
    const auto gap = single_modality_bayes_gap(generate_phantom(decoys));
    CHECK(gap.pet_only <= 0.9);
    CHECK(gap.ct_only < 1.0);

    CHECK_THROWS_AS(single_modality_bayes_gap(generate_phantom(small_config(5, 0, 10))), DegenerateInputError);
}

TEST_CASE("best threshold accuracy matches an exhaustive sweep") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(12));
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (int i = 0; i < n; ++i) {
            scores[i] = static_cast<double>(rng.below(5));  // ties on purpose
            labels[i] = static_cast<int>(rng.below(2));
        }
        // Every rule: threshold between/outside distinct values, both directions.
        std::vector<double> cuts{-1.0};
        for (double s : scores) cuts.push_back(s);
        double best = 0.0;
        for (double t : cuts)
            for (int dir = 0; dir < 2; ++dir) {
                int correct = 0;
                for (int i = 0; i < n; ++i) {
                    const int pred = dir == 0 ? scores[i] > t : !(scores[i] > t);
                    correct += pred == labels[i];
                }
                best = std::max(best, static_cast<double>(correct) / n);
            }
        CHECK(best_threshold_accuracy(scores, labels) == doctest::Approx(best));
    }
}

TEST_CASE("phantom config validation") {
    auto c = small_config(0, 1, 1);
    CHECK_NOTHROW(c.validate());
    auto bad = c;
    bad.image_size = 16;
    CHECK_THROWS_AS(generate_phantom(bad), ConfigError);
    bad = c;
    bad.decoy_rate = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.lesion_radius_max = 12.0;  // image_size / 4
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.num_healthy = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.hotspot_intensity = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
