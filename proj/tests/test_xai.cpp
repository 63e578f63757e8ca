#include <cstring>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "demf/error.hpp"
#include "demf/render.hpp"
#include "demf/rng.hpp"
#include "demf/xai.hpp"
#include "test_util.hpp"

using namespace demf;

namespace {

// One conv block whose first channel copies the input and whose head reads
// only that channel: logit = sign * mean(relu(x)) + bias.
Classifier copy_member(int width, int kernel, float sign, float bias, int size) {
    Classifier c({"copy", 1, width, kernel, 1}, size, size, 1);
    auto& conv = dynamic_cast<nn::Conv2d&>(c.network().layer(0));
    std::fill(conv.weight().value.begin(), conv.weight().value.end(), 0.0f);
    std::fill(conv.bias().value.begin(), conv.bias().value.end(), 0.0f);
    conv.weight().value[(kernel / 2) * kernel + kernel / 2] = 1.0f;
    auto& dense = dynamic_cast<nn::Dense&>(c.network().layer(c.network().size() - 1));
    std::fill(dense.weight().value.begin(), dense.weight().value.end(), 0.0f);
    dense.weight().value[0] = sign;
    dense.bias().value[0] = bias;
    c.trained = true;
    return c;
}

Image random_image(Rng& rng, int size) {
    Image img(size, size);
    for (float& v : img.pixels()) v = static_cast<float>(rng.uniform());
    return img;
}

// Independent expectation for copy_member: the min-max normalized input.
Image normalized(const Image& x) {
    Image out(x.rows(), x.cols());
    const float lo = x.min(), hi = x.max();
    for (int r = 0; r < x.rows(); ++r)
        for (int c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - lo) / (hi - lo);
    return out;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::pair<int, int> png_size(const std::string& bytes) {
    auto be32 = [&](std::size_t at) {
        return (static_cast<unsigned char>(bytes[at]) << 24) | (static_cast<unsigned char>(bytes[at + 1]) << 16) |
               (static_cast<unsigned char>(bytes[at + 2]) << 8) | static_cast<unsigned char>(bytes[at + 3]);
    };
    return {static_cast<int>(be32(16)), static_cast<int>(be32(20))};
}

} // namespace

TEST_CASE("grad-cam of a copying network is the normalized input") {
    Rng rng(1);
    const auto model = copy_member(2, 3, 1.0f, 0.0f, 12);
    for (int trial = 0; trial < 20; ++trial) {
        const Image x = random_image(rng, 12);
        const auto cam = grad_cam(model, x, 1, {}, "s");
        CHECK_FALSE(cam.degenerate);
        CHECK(cam.slice_id == "s");
        const Image expect = normalized(x);
        for (int r = 0; r < 12; ++r)
            for (int c = 0; c < 12; ++c) CHECK(cam.map(r, c) == doctest::Approx(expect(r, c)).epsilon(1e-5));
        CHECK(attention_peak(cam.map) == attention_peak(x));
    }
}

TEST_CASE("negative evidence gives a degenerate map") {
    Rng rng(2);
    const auto model = copy_member(2, 3, 1.0f, 0.0f, 8);
    const auto cam = grad_cam(model, random_image(rng, 8), 0);
    CHECK(cam.degenerate);
    CHECK(cam.map.max() == 0.0f);
    CHECK_FALSE(attention_box(cam.map).has_value());

    const auto zero = grad_cam(model, Image(8, 8), 1);
    CHECK(zero.degenerate);
    for (float v : zero.map.pixels()) CHECK(std::isfinite(v));
}

TEST_CASE("scaling the class-score gradient leaves the map unchanged") {
    Rng rng(3);
    BackboneSpec spec{"cnn", 2, 4, 3, 1};
    Classifier model(spec, 16, 16, 7);
    model.trained = true;
    for (int trial = 0; trial < 10; ++trial) {
        const Image x = random_image(rng, 16);
        for (int target : {0, 1}) {
            const auto base = grad_cam(model, x, target);
            GradCamOptions scaled;
            scaled.gradient_scale = 10.0;
            CHECK(grad_cam(model, x, target, scaled).map == base.map);

            // Without the unit seed the scaled pass differs only by rounding.
            scaled.unit_seed = false;
            const auto raw = grad_cam(model, x, target, scaled);
            for (std::size_t i = 0; i < base.map.size(); ++i)
                CHECK(raw.map.pixels()[i] == doctest::Approx(base.map.pixels()[i]).epsilon(1e-4));
        }
    }
}

TEST_CASE("grad-cam needs convolutional features") {
    Classifier stub(linear_stub_backbone(), 8, 8, 1);
    CHECK_THROWS_AS(grad_cam(stub, Image(8, 8), 1), CapabilityError);
    const auto model = copy_member(2, 3, 1.0f, 0.0f, 8);
    CHECK_THROWS_AS(grad_cam(model, Image(6, 8), 1), DataError);
}

TEST_CASE("ensemble attention averages the agreeing members") {
    Rng rng(4);
    std::vector<Classifier> members;
    members.push_back(copy_member(2, 3, 1.0f, 2.0f, 10));
    members.push_back(copy_member(2, 5, 1.0f, 2.0f, 10));
    members.push_back(copy_member(3, 3, -1.0f, -2.0f, 10));
    const EnsembleModel model(members);
    const Image x = random_image(rng, 10);
    const auto att = ensemble_attention(model, x, "e");
    CHECK(att.predicted_label == 1);
    CHECK_FALSE(att.member.has_value());
    const Image expect = normalized(x);
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(att.map.pixels()[i] == doctest::Approx(expect.pixels()[i]).epsilon(1e-5));
    CHECK(att.map.min() >= 0.0f);
    CHECK(att.map.max() == doctest::Approx(1.0f));

    // The dissenting member alone points away from class 1.
    CHECK(grad_cam(members[2], x, 1).degenerate);
}

TEST_CASE("peaks and boxes") {
    Image m(10, 10);
    m(2, 7) = 1.0f;
    m(6, 6) = 1.0f;
    CHECK(attention_peak(m) == std::pair{2, 7});
    const BoundingBox box{4, 4, 6, 6};
    CHECK_FALSE(peak_in_box(m, box, 1));
    CHECK(peak_in_box(m, box, 2));
    CHECK(peak_in_box(m, box));
    m(4, 1) = 0.6f;
    m(8, 3) = 0.4f;
    const auto b = attention_box(m);
    REQUIRE(b);
    CHECK(*b == BoundingBox{2, 1, 6, 7});
}

TEST_CASE("overlay and grayscale PNG output") {
    test_util::TempDir tmp("xai");
    Rng rng(5);
    SlicePair pair;
    pair.ct = random_image(rng, 16);
    pair.pet = random_image(rng, 16);
    pair.label = Label::cancerous;
    pair.tumor_bbox = BoundingBox{4, 4, 8, 8};
    pair.slice_id = "p";
    const auto model = copy_member(2, 3, 1.0f, 0.0f, 16);
    const auto att = grad_cam(model, pair.ct, 1);
    write_attention_overlay(tmp.path() / "o.png", pair, pair.ct, att);
    const auto bytes = read_file(tmp.path() / "o.png");
    REQUIRE(bytes.size() > 24);
    CHECK(bytes.compare(0, 8, "\x89PNG\r\n\x1a\n") == 0);
    const auto [w, h] = png_size(bytes);
    CHECK(w >= 4 * 128);
    CHECK(h >= 128);

    write_gray_png(tmp.path() / "g.png", pair.pet);
    const auto gray = read_file(tmp.path() / "g.png");
    CHECK(png_size(gray) == std::pair{16, 16});
}

TEST_CASE("canvas primitives") {
    Canvas c(20, 10, {0, 0, 0});
    c.set(-1, 3, {255, 0, 0});
    c.set(25, 3, {255, 0, 0});
    c.fill_rect(2, 2, 4, 4, {10, 20, 30});
    CHECK(c.get(3, 3).g == 20);
    CHECK(c.get(5, 5).g == 0);
    c.stroke_rect(0, 0, 19, 9, {1, 1, 1});
    CHECK(c.get(19, 9).r == 1);
    CHECK(c.get(10, 5).r == 0);
    CHECK(Canvas::text_width("AB") > Canvas::text_width("A"));
    const auto lo = heat_color(0.0), hi = heat_color(1.0);
    CHECK(lo.b > lo.r);
    CHECK(hi.r > hi.b);
}
