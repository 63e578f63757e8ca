#include "demf/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "demf/error.hpp"
#include "demf/rng.hpp"
#include "json.hpp"

namespace demf {

void BackboneSpec::validate() const {
    if (depth < 0) throw ConfigError("backbone " + name + ": depth must be >= 0");
    if (depth > 0) {
        if (base_width < 1) throw ConfigError("backbone " + name + ": base_width must be >= 1");
        if (kernel < 1 || kernel % 2 == 0) throw ConfigError("backbone " + name + ": kernel must be odd");
    }
    if (input_channels < 1) throw ConfigError("backbone " + name + ": input_channels must be >= 1");
}

std::vector<BackboneSpec> desk_scale_backbones() {
    return {
        {"cnn_d2_w16_k3", 2, 16, 3, 1},
        {"cnn_d3_w16_k3", 3, 16, 3, 1},
        {"cnn_d2_w32_k3", 2, 32, 3, 1},
        {"cnn_d3_w32_k5", 3, 32, 5, 1},
        {"cnn_d4_w16_k3", 4, 16, 3, 1},
    };
}

BackboneSpec linear_stub_backbone() { return {"linear_stub", 0, 0, 0, 1}; }

void TrainOptions::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (decay < 0.0) throw ConfigError("train: decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (early_stop_patience && *early_stop_patience < 1) throw ConfigError("train: early_stop_patience must be >= 1");
}

Classifier::Classifier(BackboneSpec spec, int rows, int cols, std::uint64_t init_seed)
    : spec_(std::move(spec)), rows_(rows), cols_(cols) {
    spec_.validate();
    if (rows < 1 || cols < 1) throw ConfigError("classifier: empty input geometry");
    using namespace nn;
    if (spec_.is_stub()) {
        net_.add(std::make_unique<SummaryFeatures>()).add(std::make_unique<Dense>(2, 1));
    } else {
        int ch = spec_.input_channels, r = rows, c = cols;
        for (int i = 0; i < spec_.depth; ++i) {
            net_.add(std::make_unique<Conv2d>(ch, spec_.base_width, spec_.kernel));
            net_.add(std::make_unique<Relu>());
            feature_layer_ = static_cast<int>(net_.size()) - 1;
            ch = spec_.base_width;
            if (i + 1 < spec_.depth) {
                if (r < 2 || c < 2) throw ConfigError("classifier: input too small for depth " + std::to_string(spec_.depth));
                net_.add(std::make_unique<MaxPool2d>());
                r /= 2, c /= 2;
            }
        }
        net_.add(std::make_unique<GlobalMaxPool>()).add(std::make_unique<Dense>(ch, 1));
    }
    net_.initialize(init_seed);
}

nn::Tensor Classifier::to_input(std::span<const Image* const> images) const {
    nn::Tensor t(static_cast<int>(images.size()), spec_.input_channels, rows_, cols_);
    const std::size_t plane = t.plane();
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Image& img = *images[i];
        if (img.rows() != rows_ || img.cols() != cols_)
            throw DataError("classifier expects " + std::to_string(rows_) + "x" + std::to_string(cols_) + " input, got " +
                            std::to_string(img.rows()) + "x" + std::to_string(img.cols()));
        float* dst = t.sample(static_cast<int>(i));
        for (int ch = 0; ch < spec_.input_channels; ++ch)
            std::copy(img.pixels().begin(), img.pixels().end(), dst + ch * plane);
    }
    return t;
}

namespace {

constexpr std::size_t kInferenceChunk = 64;

nlohmann::ordered_json spec_json(const BackboneSpec& s) {
    return {{"name", s.name}, {"depth", s.depth}, {"base_width", s.base_width}, {"kernel", s.kernel},
            {"input_channels", s.input_channels}};
}

BackboneSpec spec_from_json(const nlohmann::json& j) {
    return {j.at("name").get<std::string>(), j.at("depth").get<int>(), j.at("base_width").get<int>(),
            j.at("kernel").get<int>(), j.at("input_channels").get<int>()};
}

// Mean BCE over the whole set in inference mode.
double dataset_loss(const Classifier& model, const std::vector<const Image*>& images, const std::vector<float>& targets) {
    double total = 0.0;
    for (std::size_t start = 0; start < images.size(); start += kInferenceChunk) {
        const std::size_t m = std::min(kInferenceChunk, images.size() - start);
        const auto x = model.to_input(std::span<const Image* const>(images).subspan(start, m));
        const auto r = nn::bce_with_logits(model.network().forward(x), std::span<const float>(targets).subspan(start, m));
        total += r.loss * static_cast<double>(m);
    }
    return total / static_cast<double>(images.size());
}

} // namespace

void Classifier::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    nn::Sequential copy = net_;
    nn::save_parameters(copy, dir / "params");
    nlohmann::ordered_json j;
    j["kind"] = "classifier";
    j["spec"] = spec_json(spec_);
    j["rows"] = rows_;
    j["cols"] = cols_;
    j["seed"] = seed;
    j["trained"] = trained;
    j["loss_history"] = loss_history;
    std::ofstream out(dir / "index.json");
    if (!out) throw DataError("cannot write " + (dir / "index.json").string());
    out << j.dump(2) << '\n';
}

Classifier Classifier::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "index.json");
    if (!in) throw DataError("missing classifier index in " + dir.string());
    try {
        const auto j = nlohmann::json::parse(in);
        Classifier c(spec_from_json(j.at("spec")), j.at("rows").get<int>(), j.at("cols").get<int>(), 0);
        nn::load_parameters(c.net_, dir / "params");
        c.seed = j.at("seed").get<std::uint64_t>();
        c.trained = j.at("trained").get<bool>();
        c.loss_history = j.at("loss_history").get<std::vector<double>>();
        return c;
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("classifier index: ") + ex.what());
    }
}

Classifier train_member(const BackboneSpec& spec, const std::vector<TrainingSlice>& data, const TrainOptions& opts) {
    opts.validate();
    if (data.empty()) throw DegenerateInputError("train_member: no training data");
    bool has_pos = false, has_neg = false;
    for (const auto& s : data) (s.label == Label::cancerous ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) throw DegenerateInputError("train_member: training data must contain both classes");

    const int rows = data.front().fused.image.rows(), cols = data.front().fused.image.cols();
    Classifier model(spec, rows, cols, derive_seed(opts.seed, 1));
    model.seed = opts.seed;

    std::vector<const Image*> images;
    std::vector<float> targets;
    images.reserve(data.size());
    targets.reserve(data.size());
    for (const auto& s : data) {
        images.push_back(&s.fused.image);
        targets.push_back(static_cast<float>(to_int(s.label)));
    }

    const double initial = dataset_loss(model, images, targets);
    if (!std::isfinite(initial)) throw DivergenceError("train_member " + spec.name + ": initial loss is not finite");
    model.loss_history.push_back(initial);

    nn::Adam adam(model.network().parameters(),
                  nn::AdamOptions{.learning_rate = opts.learning_rate, .decay = opts.decay});
    Rng rng(derive_seed(opts.seed, 2));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    const std::size_t batch = static_cast<std::size_t>(opts.batch_size);
    std::vector<const Image*> batch_images;
    std::vector<float> batch_targets;
    double best = initial;
    int since_best = 0;

    for (int epoch = 1; epoch <= opts.max_epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t m = std::min(batch, order.size() - start);
            batch_images.clear();
            batch_targets.clear();
            for (std::size_t i = start; i < start + m; ++i) {
                batch_images.push_back(images[order[i]]);
                batch_targets.push_back(targets[order[i]]);
            }
            model.network().zero_grad();
            const auto logits = model.network().forward_train(model.to_input(batch_images));
            const auto r = nn::bce_with_logits(logits, batch_targets);
            if (!std::isfinite(r.loss)) {
                std::ostringstream msg;
                msg << "train_member " << spec.name << ": loss became non-finite in epoch " << epoch
                    << " (previous epoch loss " << model.loss_history.back() << ")";
                throw DivergenceError(msg.str());
            }
            sum += r.loss * static_cast<double>(m);
            model.network().backward(r.grad);
            adam.step();
        }
        const double epoch_loss = sum / static_cast<double>(order.size());
        model.loss_history.push_back(epoch_loss);
        if (opts.early_stop_patience) {
            if (epoch_loss < best) {
                best = epoch_loss;
                since_best = 0;
            } else if (++since_best >= *opts.early_stop_patience) {
                break;
            }
        }
    }

    if (!(model.loss_history.back() < initial)) {
        std::ostringstream msg;
        msg << "train_member " << spec.name << ": final loss " << model.loss_history.back()
            << " is not below the initial loss " << initial;
        throw TrainingError(msg.str());
    }
    model.trained = true;
    return model;
}

std::vector<double> predict_member(const Classifier& model, const std::vector<Image>& images) {
    std::vector<double> out;
    out.reserve(images.size());
    std::vector<const Image*> ptrs;
    for (const auto& img : images) ptrs.push_back(&img);
    for (std::size_t start = 0; start < ptrs.size(); start += kInferenceChunk) {
        const std::size_t m = std::min(kInferenceChunk, ptrs.size() - start);
        const auto logits = model.network().forward(model.to_input(std::span<const Image* const>(ptrs).subspan(start, m)));
        for (std::size_t i = 0; i < m; ++i) out.push_back(nn::sigmoid(logits.data()[i]));
    }
    return out;
}

std::string_view to_string(TieBreak t) noexcept { return t == TieBreak::positive ? "positive" : "negative"; }

TieBreak tie_break_from_string(std::string_view s) {
    if (s == "positive") return TieBreak::positive;
    if (s == "negative") return TieBreak::negative;
    throw ConfigError("unknown tie_break '" + std::string(s) + "'");
}

int majority_vote(std::span<const int> votes, TieBreak tie_break) {
    if (votes.empty()) throw DataError("majority_vote: no votes");
    std::size_t ones = 0;
    for (int v : votes) {
        if (v != 0 && v != 1) throw DataError("majority_vote: votes must be 0 or 1");
        ones += static_cast<std::size_t>(v);
    }
    const std::size_t zeros = votes.size() - ones;
    if (ones != zeros) return ones > zeros ? 1 : 0;
    return tie_break == TieBreak::positive ? 1 : 0;
}

EnsembleModel::EnsembleModel(std::vector<Classifier> members, double threshold, TieBreak tie_break)
    : members_(std::move(members)), threshold_(threshold), tie_break_(tie_break) {
    if (members_.empty()) throw ConfigError("ensemble: at least one member required");
    if (!(threshold_ > 0.0 && threshold_ < 1.0)) throw ConfigError("ensemble: threshold must lie in (0, 1)");
    std::set<std::tuple<int, int, int>> seen;
    for (const auto& m : members_) {
        const auto& s = m.spec();
        if (!seen.insert({s.depth, s.base_width, s.kernel}).second)
            throw ConfigError("ensemble: members must have distinct (depth, base_width, kernel); duplicate " + s.name);
    }
}

void EnsembleModel::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json j;
    j["threshold"] = threshold_;
    j["tie_break"] = std::string(to_string(tie_break_));
    j["members"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < members_.size(); ++i) {
        const std::string sub = "member_" + std::to_string(i);
        members_[i].save(dir / sub);
        j["members"].push_back({{"dir", sub}, {"spec", spec_json(members_[i].spec())}, {"seed", members_[i].seed}});
    }
    std::ofstream out(dir / "ensemble.json");
    if (!out) throw DataError("cannot write " + (dir / "ensemble.json").string());
    out << j.dump(2) << '\n';
}

EnsembleModel EnsembleModel::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "ensemble.json");
    if (!in) throw DataError("missing ensemble index in " + dir.string());
    try {
        const auto j = nlohmann::json::parse(in);
        std::vector<Classifier> members;
        for (const auto& m : j.at("members")) members.push_back(Classifier::load(dir / m.at("dir").get<std::string>()));
        return EnsembleModel(std::move(members), j.at("threshold").get<double>(),
                             tie_break_from_string(j.at("tie_break").get<std::string>()));
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("ensemble index: ") + ex.what());
    }
}

EnsemblePrediction predict_ensemble(const EnsembleModel& model, const std::vector<Image>& images) {
    for (const auto& m : model.members())
        if (!m.trained) throw StateError("predict_ensemble: member " + m.spec().name + " is untrained");
    EnsemblePrediction out;
    out.votes.assign(images.size(), std::vector<int>(model.size()));
    out.probabilities.assign(images.size(), std::vector<double>(model.size()));
    for (std::size_t j = 0; j < model.size(); ++j) {
        const auto probs = predict_member(model.members()[j], images);
        for (std::size_t i = 0; i < images.size(); ++i) {
            out.probabilities[i][j] = probs[i];
            out.votes[i][j] = probs[i] >= model.threshold() ? 1 : 0;
        }
    }
    out.labels.reserve(images.size());
    for (const auto& v : out.votes) out.labels.push_back(majority_vote(v, model.tie_break()));
    return out;
}

void write_vote_csv(const std::filesystem::path& path, const std::vector<std::string>& slice_ids,
                    const EnsemblePrediction& prediction, const std::vector<int>& truth) {
    if (slice_ids.size() != prediction.labels.size() || truth.size() != slice_ids.size())
        throw DataError("write_vote_csv: column lengths differ");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    const std::size_t n = prediction.votes.empty() ? 0 : prediction.votes.front().size();
    out << "slice_id";
    for (std::size_t j = 0; j < n; ++j) out << ",member_" << j;
    out << ",ensembled,truth\n";
    for (std::size_t i = 0; i < slice_ids.size(); ++i) {
        out << slice_ids[i];
        for (int v : prediction.votes[i]) out << ',' << v;
        out << ',' << prediction.labels[i] << ',' << truth[i] << '\n';
    }
}

} // namespace demf
