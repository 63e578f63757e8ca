#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <tuple>

#include "doctest.h"
#include "demf/ensemble.hpp"
#include "demf/error.hpp"
#include "demf/rng.hpp"
#include "oracles/reference.hpp"
#include "test_util.hpp"

using namespace demf;

namespace {

// Cancerous slices carry a bright square somewhere; healthy ones are noise.
std::vector<TrainingSlice> separable(int n, int size, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TrainingSlice> out;
    for (int i = 0; i < n; ++i) {
        Image img(size, size);
        for (float& v : img.pixels()) v = static_cast<float>(0.2 * rng.uniform());
        const bool pos = i % 2 == 0;
        if (pos) {
            const int r = static_cast<int>(rng.below(size - 2)), c = static_cast<int>(rng.below(size - 2));
            for (int dr = 0; dr < 3; ++dr)
                for (int dc = 0; dc < 3; ++dc) img(r + dr, c + dc) = 1.0f;
        }
        TrainingSlice s;
        s.slice_id = "t" + std::to_string(i);
        s.label = pos ? Label::cancerous : Label::healthy;
        s.fused.image = img;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Image> images_of(const std::vector<TrainingSlice>& d) {
    std::vector<Image> out;
    for (const auto& s : d) out.push_back(s.fused.image);
    return out;
}

// A trained member whose output is sigmoid(bias) for every input.
Classifier constant_member(const BackboneSpec& spec, int size, double probability) {
    Classifier c(spec, size, size, 1);
    auto& dense = dynamic_cast<nn::Dense&>(c.network().layer(c.network().size() - 1));
    std::fill(dense.weight().value.begin(), dense.weight().value.end(), 0.0f);
    dense.bias().value[0] = static_cast<float>(std::log(probability / (1.0 - probability)));
    c.trained = true;
    return c;
}

} // namespace

TEST_CASE("majority vote matches the counting oracle for every pattern up to 7 voters") {
    for (int n = 1; n <= 7; ++n)
        for (std::uint32_t p = 0; p < (1u << n); ++p) {
            const auto votes = oracle::vote_vector(p, n);
            CHECK(majority_vote(votes, TieBreak::positive) == oracle::count_vote(votes, true));
            CHECK(majority_vote(votes, TieBreak::negative) == oracle::count_vote(votes, false));
        }
}

TEST_CASE("vote properties") {
    Rng rng(3);
    for (int trial = 0; trial < 500; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(9));
        std::vector<int> v(n);
        for (int& x : v) x = static_cast<int>(rng.below(2));
        const int base = majority_vote(v);

        auto shuffled = v;
        rng.shuffle(std::span<int>(shuffled));
        CHECK(majority_vote(shuffled) == base);

        // Flipping a 0 to 1 never turns the outcome from 1 to 0.
        for (int i = 0; i < n; ++i)
            if (v[i] == 0) {
                auto up = v;
                up[i] = 1;
                CHECK(majority_vote(up) >= base);
            }
        // Odd ensembles never consult the tie-break.
        if (n % 2 == 1) CHECK(majority_vote(v, TieBreak::positive) == majority_vote(v, TieBreak::negative));
    }
    CHECK(majority_vote(std::vector<int>(5, 1)) == 1);
    CHECK(majority_vote(std::vector<int>(5, 0), TieBreak::positive) == 0);
    CHECK_THROWS_AS(majority_vote(std::vector<int>{}), DataError);
    CHECK_THROWS_AS(majority_vote(std::vector<int>{0, 2}), DataError);
}

TEST_CASE("default backbones have distinct architectures") {
    const auto b = desk_scale_backbones();
    CHECK(b.size() == 5);
    std::set<std::tuple<int, int, int>> triples;
    for (const auto& s : b) {
        CHECK_NOTHROW(s.validate());
        triples.insert({s.depth, s.base_width, s.kernel});
    }
    CHECK(triples.size() == b.size());
}

TEST_CASE("the linear stub learns a separable set") {
    const auto data = separable(40, 8, 1);
    TrainOptions opts;
    opts.learning_rate = 0.05;
    opts.max_epochs = 60;
    opts.batch_size = 8;
    const auto model = train_member(linear_stub_backbone(), data, opts);
    CHECK(model.trained);
    CHECK(model.loss_history.size() == 61);
    CHECK(model.loss_history.back() < model.loss_history.front());
    const auto probs = predict_member(model, images_of(data));
    int correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) correct += (probs[i] >= 0.5) == (data[i].label == Label::cancerous);
    CHECK(correct == static_cast<int>(data.size()));
}

TEST_CASE("a small CNN member trains deterministically") {
    const auto data = separable(24, 8, 2);
    TrainOptions opts;
    opts.learning_rate = 3e-3;
    opts.max_epochs = 6;
    opts.batch_size = 8;
    opts.seed = 9;
    const BackboneSpec spec{"tiny", 2, 4, 3, 1};
    const auto a = train_member(spec, data, opts), b = train_member(spec, data, opts);
    CHECK(a.loss_history == b.loss_history);
    CHECK(predict_member(a, images_of(data)) == predict_member(b, images_of(data)));
    CHECK(a.feature_layer() >= 0);
    CHECK(a.network().layer(a.feature_layer()).kind() == "relu");
    opts.seed = 10;
    const auto c = train_member(spec, data, opts);
    CHECK(c.loss_history != a.loss_history);
}

TEST_CASE("training rejects single-class data and bad geometry") {
    auto data = separable(10, 8, 3);
    for (auto& s : data) s.label = Label::healthy;
    CHECK_THROWS_AS(train_member(linear_stub_backbone(), data, TrainOptions{}), DegenerateInputError);
    data = separable(10, 8, 3);
    data[3].fused.image = Image(6, 6);
    CHECK_THROWS_AS(train_member(linear_stub_backbone(), data, TrainOptions{}), DataError);
    TrainOptions bad;
    bad.batch_size = 0;
    CHECK_THROWS_AS(train_member(linear_stub_backbone(), separable(10, 8, 3), bad), ConfigError);
}

TEST_CASE("predict_member edge cases") {
    const auto c = constant_member(linear_stub_backbone(), 8, 0.9);
    CHECK(predict_member(c, {}).empty());
    const auto one = predict_member(c, {Image(8, 8, 0.3f)});
    REQUIRE(one.size() == 1);
    CHECK(one[0] == doctest::Approx(0.9).epsilon(1e-6));
    // More images than one inference chunk.
    const auto many = predict_member(c, std::vector<Image>(150, Image(8, 8)));
    CHECK(many.size() == 150);
    CHECK_THROWS_AS(predict_member(c, {Image(4, 8)}), DataError);
}

TEST_CASE("ensemble prediction") {
    std::vector<Classifier> members;
    members.push_back(constant_member(linear_stub_backbone(), 8, 0.9));
    members.push_back(constant_member({"a", 1, 2, 3, 1}, 8, 0.2));
    members.push_back(constant_member({"b", 1, 2, 5, 1}, 8, 0.7));
    const std::vector<Image> imgs(3, Image(8, 8, 0.5f));

    const EnsembleModel model(members);
    const auto pred = predict_ensemble(model, imgs);
    REQUIRE(pred.labels.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(pred.votes[i] == std::vector<int>{1, 0, 1});
        CHECK(pred.labels[i] == 1);
    }
    // A threshold above every probability flips every vote.
    CHECK(predict_ensemble(EnsembleModel(members, 0.95), imgs).labels == std::vector<int>(3, 0));

    // Any strictly increasing remap of probabilities and threshold keeps
    // the votes.
    const double t = 0.5;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            const double p = pred.probabilities[i][j];
            CHECK((p >= t) == (p * p * p >= t * t * t));
        }

    auto untrained = members;
    untrained[1].trained = false;
    CHECK_THROWS_AS(predict_ensemble(EnsembleModel(untrained), imgs), StateError);
}

TEST_CASE("ensemble construction rules") {
    CHECK_THROWS_AS(EnsembleModel({}), ConfigError);
    std::vector<Classifier> dup;
    dup.push_back(constant_member({"a", 1, 2, 3, 1}, 8, 0.6));
    dup.push_back(constant_member({"b", 1, 2, 3, 1}, 8, 0.6));
    CHECK_THROWS_AS(EnsembleModel{dup}, ConfigError);
    std::vector<Classifier> one{constant_member(linear_stub_backbone(), 8, 0.6)};
    CHECK_THROWS_AS(EnsembleModel(one, 1.0), ConfigError);
}

TEST_CASE("ensemble checkpoints round-trip") {
    test_util::TempDir tmp("ensemble");
    const auto data = separable(16, 8, 4);
    TrainOptions opts;
    opts.learning_rate = 3e-3;
    opts.max_epochs = 2;
    std::vector<Classifier> members;
    members.push_back(train_member({"tiny", 2, 4, 3, 1}, data, opts));
    members.push_back(train_member(linear_stub_backbone(), data, opts));
    const EnsembleModel model(members, 0.4, TieBreak::negative);
    model.save(tmp.path() / "ens");
    const auto back = EnsembleModel::load(tmp.path() / "ens");
    CHECK(back.size() == 2);
    CHECK(back.threshold() == 0.4);
    CHECK(back.tie_break() == TieBreak::negative);
    CHECK(back.members()[0].loss_history == members[0].loss_history);
    const auto imgs = images_of(data);
    const auto p0 = predict_ensemble(model, imgs), p1 = predict_ensemble(back, imgs);
    CHECK(p0.probabilities == p1.probabilities);
    CHECK(p0.labels == p1.labels);

    write_vote_csv(tmp.path() / "votes.csv", {"a", "b"}, EnsemblePrediction{{1, 0}, {{1, 1}, {0, 1}}, {{0.9, 0.8}, {0.1, 0.6}}},
                   {1, 1});
    std::ifstream in(tmp.path() / "votes.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "slice_id,member_0,member_1,ensembled,truth");
    CHECK(row == "a,1,1,1,1");
}
