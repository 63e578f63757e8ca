#include "demf/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "demf/error.hpp"
#include "demf/rng.hpp"
#include "json.hpp"

namespace demf {

std::string_view to_string(FusionTarget t) noexcept { return t == FusionTarget::max ? "max" : "mean"; }

FusionTarget fusion_target_from_string(std::string_view s) {
    if (s == "max") return FusionTarget::max;
    if (s == "mean") return FusionTarget::mean;
    throw ConfigError("unknown autoencoder target '" + std::string(s) + "'");
}

void AutoencoderSpec::validate() const {
    if (encoder_channels.size() != 3) throw ConfigError("autoencoder: exactly 3 encoder stages required");
    if (decoder_channels.size() != 2) throw ConfigError("autoencoder: exactly 2 decoder stages required");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("autoencoder: kernel must be odd");
    if (input_channels < 1) throw ConfigError("autoencoder: input_channels must be >= 1");
    for (int c : encoder_channels)
        if (c < 1) throw ConfigError("autoencoder: channel widths must be >= 1");
    for (int c : decoder_channels)
        if (c < 1) throw ConfigError("autoencoder: channel widths must be >= 1");
}

nn::Sequential build_autoencoder(const AutoencoderSpec& spec) {
    spec.validate();
    using namespace nn;
    Sequential net;
    int ch = spec.input_channels;
    for (int width : spec.encoder_channels) {
        net.add(std::make_unique<Conv2d>(ch, width, spec.kernel));
        net.add(std::make_unique<Relu>());
        net.add(std::make_unique<MaxPool2d>());
        ch = width;
    }
    for (int width : spec.decoder_channels) {
        net.add(std::make_unique<Upsample2d>());
        net.add(std::make_unique<Conv2d>(ch, width, spec.kernel));
        net.add(std::make_unique<Relu>());
        ch = width;
    }
    net.add(std::make_unique<Upsample2d>());
    net.add(std::make_unique<Conv2d>(ch, 1, spec.kernel));
    net.add(std::make_unique<RectifiedTanh>());
    return net;
}

Image fusion_target(const Image& a, const Image& b, FusionTarget target) {
    if (!a.same_shape(b)) throw DataError("fusion_target: shape mismatch");
    Image out(a.rows(), a.cols());
    auto pa = a.pixels(), pb = b.pixels();
    auto po = out.pixels();
    for (std::size_t i = 0; i < po.size(); ++i)
        po[i] = target == FusionTarget::max ? std::max(pa[i], pb[i]) : 0.5f * (pa[i] + pb[i]);
    return out;
}

namespace {

void check_pairs(const std::vector<ImagePair>& pairs) {
    if (pairs.empty()) throw DataError("autoencoder: empty training set");
    const Image& ref = pairs.front().ct;
    if (ref.rows() % 8 != 0 || ref.cols() % 8 != 0 || ref.empty())
        throw DataError("autoencoder: input size must be a positive multiple of 8");
    for (const auto& p : pairs)
        if (!p.ct.same_shape(ref) || !p.pet.same_shape(ref))
            throw DataError("autoencoder: all inputs must share one size");
}

// Stacks pairs[idx...] into an input batch and the matching target batch.
void make_batch(const std::vector<ImagePair>& pairs, std::span<const std::size_t> idx, FusionTarget target,
                nn::Tensor& input, nn::Tensor* out_target) {
    const int h = pairs.front().ct.rows(), w = pairs.front().ct.cols();
    const int b = static_cast<int>(idx.size());
    input = nn::Tensor(b, 2, h, w);
    if (out_target) *out_target = nn::Tensor(b, 1, h, w);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < b; ++i) {
        const auto& p = pairs[idx[i]];
        std::copy(p.ct.pixels().begin(), p.ct.pixels().end(), input.sample(i));
        std::copy(p.pet.pixels().begin(), p.pet.pixels().end(), input.sample(i) + hw);
        if (out_target) {
            const Image t = fusion_target(p.ct, p.pet, target);
            std::copy(t.pixels().begin(), t.pixels().end(), out_target->sample(i));
        }
    }
}

} // namespace

Autoencoder::Autoencoder(AutoencoderSpec spec, std::uint64_t init_seed)
    : spec_(std::move(spec)), net_(build_autoencoder(spec_)) {
    net_.initialize(init_seed);
}

Image Autoencoder::fuse(const Image& ct, const Image& pet) const {
    return fuse_batch({ImagePair{ct, pet}}).front();
}

std::vector<Image> Autoencoder::fuse_batch(const std::vector<ImagePair>& pairs) const {
    if (pairs.empty()) return {};
    check_pairs(pairs);
    std::vector<Image> out;
    out.reserve(pairs.size());
    std::vector<std::size_t> idx(pairs.size());
    std::iota(idx.begin(), idx.end(), 0);
    constexpr std::size_t kChunk = 32;
    for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
        const std::size_t m = std::min(kChunk, pairs.size() - start);
        nn::Tensor input;
        make_batch(pairs, std::span<const std::size_t>(idx).subspan(start, m), spec_.target, input, nullptr);
        const nn::Tensor y = net_.forward(input);
        for (std::size_t i = 0; i < m; ++i) {
            Image img(y.h(), y.w());
            std::copy(y.sample(static_cast<int>(i)), y.sample(static_cast<int>(i)) + y.plane(), img.pixels().begin());
            clamp(img);
            out.push_back(std::move(img));
        }
    }
    return out;
}

double Autoencoder::loss(const std::vector<ImagePair>& pairs) const {
    check_pairs(pairs);
    std::vector<std::size_t> idx(pairs.size());
    std::iota(idx.begin(), idx.end(), 0);
    double total = 0.0;
    std::size_t count = 0;
    constexpr std::size_t kChunk = 32;
    for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
        const std::size_t m = std::min(kChunk, pairs.size() - start);
        nn::Tensor input, target;
        make_batch(pairs, std::span<const std::size_t>(idx).subspan(start, m), spec_.target, input, &target);
        const auto r = nn::mse(net_.forward(input), target);
        total += r.loss * static_cast<double>(target.size());
        count += target.size();
    }
    return total / static_cast<double>(count);
}

void Autoencoder::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    nn::Sequential copy = net_;
    nn::save_parameters(copy, dir / "params");
    nlohmann::ordered_json j;
    j["kind"] = "autoencoder";
    j["encoder_channels"] = spec_.encoder_channels;
    j["decoder_channels"] = spec_.decoder_channels;
    j["kernel"] = spec_.kernel;
    j["input_channels"] = spec_.input_channels;
    j["target"] = std::string(to_string(spec_.target));
    j["trained"] = trained;
    j["initial_loss"] = initial_loss;
    j["final_loss"] = final_loss;
    j["loss_history"] = loss_history;
    std::ofstream out(dir / "index.json");
    if (!out) throw DataError("cannot write " + (dir / "index.json").string());
    out << j.dump(2) << '\n';
}

Autoencoder Autoencoder::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "index.json");
    if (!in) throw DataError("missing autoencoder index in " + dir.string());
    try {
        const auto j = nlohmann::json::parse(in);
        AutoencoderSpec spec;
        spec.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
        spec.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
        spec.kernel = j.at("kernel").get<int>();
        spec.input_channels = j.at("input_channels").get<int>();
        spec.target = fusion_target_from_string(j.at("target").get<std::string>());
        Autoencoder ae(spec, 0);
        nn::load_parameters(ae.net_, dir / "params");
        ae.trained = j.at("trained").get<bool>();
        ae.initial_loss = j.at("initial_loss").get<double>();
        ae.final_loss = j.at("final_loss").get<double>();
        ae.loss_history = j.at("loss_history").get<std::vector<double>>();
        return ae;
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("autoencoder index: ") + ex.what());
    }
}

Autoencoder train_autoencoder(const std::vector<ImagePair>& pairs, const AutoencoderSpec& spec,
                              const AutoencoderTrainOptions& opts) {
    check_pairs(pairs);
    if (opts.steps < 0 || opts.batch_size < 1) throw ConfigError("autoencoder: steps >= 0 and batch_size >= 1 required");

    Autoencoder ae(spec, derive_seed(opts.seed, 1));
    nn::Adam adam(ae.network().parameters(), nn::AdamOptions{.learning_rate = opts.learning_rate, .decay = opts.decay});
    Rng rng(derive_seed(opts.seed, 2));

    ae.initial_loss = ae.loss(pairs);
    if (!std::isfinite(ae.initial_loss)) throw DivergenceError("autoencoder: initial loss is not finite");

    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(opts.batch_size), pairs.size());
    std::vector<std::size_t> idx(batch);

    for (int step = 0; step < opts.steps; ++step) {
        for (auto& i : idx) {
            if (cursor == order.size()) {
                rng.shuffle(std::span<std::size_t>(order));
                cursor = 0;
            }
            i = order[cursor++];
        }
        nn::Tensor input, target;
        make_batch(pairs, idx, spec.target, input, &target);
        ae.network().zero_grad();
        const nn::Tensor y = ae.network().forward_train(input);
        const auto r = nn::mse(y, target);
        if (!std::isfinite(r.loss)) {
            std::ostringstream msg;
            msg << "autoencoder: loss became non-finite at step " << step << " (last finite loss "
                << (ae.loss_history.empty() ? ae.initial_loss : ae.loss_history.back()) << ")";
            throw DivergenceError(msg.str());
        }
        ae.loss_history.push_back(r.loss);
        ae.network().backward(r.grad);
        adam.step();
    }
    ae.final_loss = ae.loss(pairs);
    if (!std::isfinite(ae.final_loss)) throw DivergenceError("autoencoder: final loss is not finite");
    ae.trained = true;
    return ae;
}

} // namespace demf
