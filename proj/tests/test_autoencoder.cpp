#include <cmath>

#include "doctest.h"
#include "demf/autoencoder.hpp"
#include "demf/error.hpp"
#include "demf/fusion.hpp"
#include "demf/phantom.hpp"
#include "test_util.hpp"

using namespace demf;

namespace {

std::vector<SlicePair> phantom_pairs(int n, int size = 32) {
    PhantomConfig pc;
    pc.seed = 5;
    pc.num_cancerous = n / 2;
    pc.num_healthy = n - n / 2;
    pc.image_size = size;
    pc.lesion_radius_min = 2;
    pc.lesion_radius_max = 4;
    return generate_phantom(pc);
}

std::vector<ImagePair> as_inputs(const std::vector<SlicePair>& pairs) {
    std::vector<ImagePair> out;
    for (const auto& p : pairs) out.push_back(pca_reconstructed_pair(p, 20));
    return out;
}

} // namespace

TEST_CASE("autoencoder output keeps the input size") {
    Autoencoder ae(AutoencoderSpec{}, 3);
    for (int rows = 8; rows <= 64; rows += 8) {
        const int cols = rows == 8 ? 24 : rows;
        const Image out = ae.fuse(Image(rows, cols, 0.5f), Image(rows, cols, 0.2f));
        CHECK(out.rows() == rows);
        CHECK(out.cols() == cols);
        CHECK(out.min() >= 0.0f);
        CHECK(out.max() <= 1.0f);
    }
    CHECK_THROWS_AS(ae.fuse(Image(12, 12), Image(12, 12)), DataError);
    CHECK_THROWS_AS(ae.fuse(Image(16, 16), Image(8, 8)), DataError);
}

TEST_CASE("autoencoder spec is validated") {
    AutoencoderSpec s;
    s.encoder_channels = {16, 32};
    CHECK_THROWS_AS(build_autoencoder(s), ConfigError);
    s = {};
    s.kernel = 4;
    CHECK_THROWS_AS(build_autoencoder(s), ConfigError);
    CHECK(fusion_target_from_string("mean") == FusionTarget::mean);
    CHECK_THROWS_AS(fusion_target_from_string("median"), ConfigError);
}

TEST_CASE("50 steps on 16 phantom pairs reduce the loss, deterministically") {
    const auto inputs = as_inputs(phantom_pairs(16));
    AutoencoderTrainOptions opts;
    opts.seed = 1;
    const auto a = train_autoencoder(inputs, AutoencoderSpec{}, opts);
    CHECK(a.trained);
    CHECK(a.loss_history.size() == 50);
    CHECK(a.final_loss < a.initial_loss);

    const auto b = train_autoencoder(inputs, AutoencoderSpec{}, opts);
    REQUIRE(b.loss_history.size() == a.loss_history.size());
    for (std::size_t i = 0; i < a.loss_history.size(); ++i)
        CHECK(std::abs(a.loss_history[i] - b.loss_history[i]) <= 1e-6);
}

TEST_CASE("zero images are a fixed point") {
    std::vector<ImagePair> zeros(4, ImagePair{Image(16, 16), Image(16, 16)});
    AutoencoderTrainOptions opts;
    opts.steps = 5;
    const auto ae = train_autoencoder(zeros, AutoencoderSpec{}, opts);
    CHECK(ae.final_loss == doctest::Approx(0.0));
    CHECK(ae.fuse(Image(16, 16), Image(16, 16)).max() == doctest::Approx(0.0));
}

TEST_CASE("non-finite inputs surface as divergence") {
    std::vector<ImagePair> pairs(2, ImagePair{Image(8, 8, 0.5f), Image(8, 8, 0.5f)});
    pairs[1].ct(3, 3) = NAN;
    CHECK_THROWS_AS(train_autoencoder(pairs, AutoencoderSpec{}, {}), DivergenceError);
    CHECK_THROWS_AS(train_autoencoder({}, AutoencoderSpec{}, {}), DataError);
}

TEST_CASE("autoencoder checkpoints round trip") {
    test_util::TempDir tmp("ae");
    const auto inputs = as_inputs(phantom_pairs(4));
    AutoencoderTrainOptions opts;
    opts.steps = 3;
    const auto ae = train_autoencoder(inputs, AutoencoderSpec{}, opts);
    ae.save(tmp.path() / "ae");
    const auto back = Autoencoder::load(tmp.path() / "ae");
    CHECK(back.trained);
    CHECK(back.loss_history == ae.loss_history);
    CHECK(back.fuse(inputs[0].ct, inputs[0].pet) == ae.fuse(inputs[0].ct, inputs[0].pet));
}

TEST_CASE("fusion strategies") {
    const auto pairs = phantom_pairs(2);
    SlicePair same = pairs[0];
    same.pet = same.ct;
    CHECK(fuse(same, FusionStrategy::mean).image == same.ct);

    SlicePair hot = pairs[0];
    hot.ct = Image(32, 32, 0.0f);
    hot.pet = Image(32, 32, 0.0f);
    for (int r = 10; r < 13; ++r)
        for (int c = 10; c < 13; ++c) hot.pet(r, c) = 1.0f;
    const auto mx = fuse(hot, FusionStrategy::max).image;
    CHECK(mx(11, 11) == 1.0f);
    CHECK(mx(0, 0) == 0.0f);

    CHECK(fuse(pairs[0], FusionStrategy::ct_only).image == pairs[0].ct);
    CHECK(fuse(pairs[0], FusionStrategy::pet_only).image == pairs[0].pet);

    const auto rec = pca_reconstructed_pair(pairs[0], 20);
    const auto po = fuse(pairs[0], FusionStrategy::pca_only).image;
    CHECK(po(5, 7) == doctest::Approx(0.5 * (rec.ct(5, 7) + rec.pet(5, 7))));

    CHECK_THROWS_AS(fuse(pairs[0], FusionStrategy::pcae), ConfigError);
    CHECK_THROWS_AS(fuse(pairs[0], FusionStrategy::ae_only), ConfigError);

    AutoencoderTrainOptions opts;
    opts.steps = 2;
    const auto ae = train_autoencoder(as_inputs(pairs), AutoencoderSpec{}, opts);
    FusionModels models;
    models.pcae = &ae;
    const auto a = fuse(pairs[1], FusionStrategy::pcae, models);
    const auto b = fuse(pairs[1], FusionStrategy::pcae, models);
    CHECK(a.image == b.image);
    CHECK(a.image.rows() == 32);
    CHECK(a.image.min() >= 0.0f);
    CHECK(a.image.max() <= 1.0f);
    CHECK(a.parent_slice_id == pairs[1].slice_id);
    CHECK(a.strategy == FusionStrategy::pcae);

    SlicePair broken = pairs[0];
    broken.pet = Image(16, 16);
    CHECK_THROWS_AS(fuse(broken, FusionStrategy::mean), DataError);
}

TEST_CASE("pcae on a 128 phantom pair stays in range") {
    const auto pairs = phantom_pairs(1, 128);
    Autoencoder ae(AutoencoderSpec{}, 9);
    ae.trained = true;
    FusionModels models;
    models.pcae = &ae;
    const auto f = fuse(pairs[0], FusionStrategy::pcae, models);
    CHECK(f.image.rows() == 128);
    CHECK(f.image.cols() == 128);
    CHECK(f.image.min() >= 0.0f);
    CHECK(f.image.max() <= 1.0f);
}
