#include "demf/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "demf/array_io.hpp"
#include "demf/error.hpp"
#include "demf/fusion.hpp"
#include "demf/render.hpp"
#include "demf/rng.hpp"
#include "demf/xai.hpp"

namespace demf {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// ------------------------------------------------------------------ config

namespace {

void check_keys(const json& obj, const std::string& where, std::initializer_list<std::string_view> allowed) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : obj.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read(const json& obj, const std::string& where, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

ordered_json backbone_json(const BackboneSpec& b) {
    return {{"name", b.name}, {"depth", b.depth}, {"base_width", b.base_width}, {"kernel", b.kernel},
            {"input_channels", b.input_channels}};
}

std::string strategy_of_cell(const std::string& cell) {
    if (cell == "ct") return "ct_only";
    if (cell == "pet") return "pet_only";
    return cell.substr(std::string("fused:").size());
}

} // namespace

void ExperimentConfig::validate() const {
    phantom.validate();
    preprocess.validate();
    augment.validate();
    train.validate();
    if (autoencoder.pca_components < 0) throw ConfigError("autoencoder.pca_components must be >= 0");
    autoencoder.spec.validate();
    if (autoencoder.train.steps < 0 || autoencoder.train.batch_size < 1)
        throw ConfigError("autoencoder: steps >= 0 and batch_size >= 1 required");
    if (!(autoencoder.train.learning_rate > 0.0)) throw ConfigError("autoencoder.learning_rate must be > 0");
    if (backbones.empty()) throw ConfigError("at least one backbone required");
    std::set<std::tuple<int, int, int>> triples;
    std::set<std::string> names;
    for (const auto& b : backbones) {
        b.validate();
        if (!triples.insert({b.depth, b.base_width, b.kernel}).second)
            throw ConfigError("backbones must have distinct (depth, base_width, kernel); duplicate " + b.name);
        if (b.name.empty() || b.name == "ensemble" || !names.insert(b.name).second)
            throw ConfigError("backbone names must be unique, non-empty and not 'ensemble'");
    }
    if (!(ensemble.threshold > 0.0 && ensemble.threshold < 1.0)) throw ConfigError("ensemble.threshold must lie in (0, 1)");
    if (seeds.empty()) throw ConfigError("at least one seed required");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw ConfigError("seeds must be distinct");
    if (output_dir.empty()) throw ConfigError("output_dir must be set");
    if (fusion_strategy == FusionStrategy::ct_only || fusion_strategy == FusionStrategy::pet_only)
        throw ConfigError("fusion_strategy must be a fusion method; use ablation_axes.modality for single modalities");
    if (ablation_axes) {
        for (auto f : ablation_axes->fusion)
            if (f == FusionStrategy::ct_only || f == FusionStrategy::pet_only)
                throw ConfigError("ablation_axes.fusion accepts pcae, pca_only, ae_only, mean, max");
        for (const auto& m : ablation_axes->modality)
            if (m != "ct" && m != "pet" && m != "fused")
                throw ConfigError("ablation_axes.modality accepts ct, pet, fused; got '" + m + "'");
    }
    std::set<std::string> test_names;
    for (const auto& t : external_test_sets)
        if (t.name.empty() || t.name == "primary" || !test_names.insert(t.name).second)
            throw ConfigError("external test set names must be unique, non-empty and not 'primary'");
    const auto c = cells();
    if (std::set<std::string>(c.begin(), c.end()).size() != c.size()) throw ConfigError("ablation axes contain duplicates");
}

std::vector<std::string> ExperimentConfig::cells() const {
    std::vector<FusionStrategy> fusion{fusion_strategy};
    std::vector<std::string> modality{"fused"};
    if (ablation_axes) {
        if (!ablation_axes->fusion.empty()) fusion = ablation_axes->fusion;
        if (!ablation_axes->modality.empty()) modality = ablation_axes->modality;
    }
    std::vector<std::string> out;
    for (const auto& m : modality) {
        if (m == "fused")
            for (auto f : fusion) out.push_back("fused:" + std::string(to_string(f)));
        else
            out.push_back(m);
    }
    return out;
}

ordered_json config_to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    const auto& p = cfg.phantom;
    j["phantom"] = {{"seed", p.seed},
                    {"num_cancerous", p.num_cancerous},
                    {"num_healthy", p.num_healthy},
                    {"image_size", p.image_size},
                    {"lesion_radius_range", {p.lesion_radius_min, p.lesion_radius_max}},
                    {"hotspot_intensity", p.hotspot_intensity},
                    {"decoy_rate", p.decoy_rate},
                    {"noise_sigma", p.noise_sigma}};
    const auto& pp = cfg.preprocess;
    j["preprocess"] = {{"hu_min", pp.hu_min},
                       {"hu_max", pp.hu_max},
                       {"target_size", pp.target_size},
                       {"split_ratio", pp.split_ratio},
                       {"split_seed", pp.split_seed}};
    j["fusion_strategy"] = std::string(to_string(cfg.fusion_strategy));
    const auto& ae = cfg.autoencoder;
    j["autoencoder"] = {{"encoder_channels", ae.spec.encoder_channels},
                        {"decoder_channels", ae.spec.decoder_channels},
                        {"kernel", ae.spec.kernel},
                        {"target", std::string(to_string(ae.spec.target))},
                        {"pca_components", ae.pca_components},
                        {"steps", ae.train.steps},
                        {"batch_size", ae.train.batch_size},
                        {"learning_rate", ae.train.learning_rate},
                        {"decay", ae.train.decay},
                        {"seed", ae.train.seed}};
    const auto& a = cfg.augment;
    j["augment"] = {{"rotation_deg", a.rotation_deg}, {"width_shift", a.width_shift},
                    {"height_shift", a.height_shift}, {"zoom", a.zoom},
                    {"shear", a.shear},               {"fold_cancerous", a.fold_cancerous},
                    {"fold_healthy", a.fold_healthy}, {"seed", a.seed},
                    {"include_original", a.include_original}};
    j["backbones"] = ordered_json::array();
    for (const auto& b : cfg.backbones) j["backbones"].push_back(backbone_json(b));
    const auto& t = cfg.train;
    j["train"] = {{"learning_rate", t.learning_rate}, {"decay", t.decay},      {"batch_size", t.batch_size},
                  {"max_epochs", t.max_epochs},       {"seed", t.seed},        {"early_stop_patience", nullptr}};
    if (t.early_stop_patience) j["train"]["early_stop_patience"] = *t.early_stop_patience;
    j["ensemble"] = {{"threshold", cfg.ensemble.threshold}, {"tie_break", std::string(to_string(cfg.ensemble.tie_break))}};
    if (cfg.ablation_axes) {
        ordered_json axes = ordered_json::object();
        if (!cfg.ablation_axes->fusion.empty()) {
            axes["fusion"] = ordered_json::array();
            for (auto f : cfg.ablation_axes->fusion) axes["fusion"].push_back(std::string(to_string(f)));
        }
        if (!cfg.ablation_axes->modality.empty()) axes["modality"] = cfg.ablation_axes->modality;
        j["ablation_axes"] = axes;
    } else {
        j["ablation_axes"] = nullptr;
    }
    j["seeds"] = cfg.seeds;
    j["output_dir"] = cfg.output_dir.string();
    j["artifacts"] = {{"augmented_slices", cfg.artifacts.augmented_slices},
                      {"fused_previews", cfg.artifacts.fused_previews},
                      {"attention_overlays", cfg.artifacts.attention_overlays}};
    j["training_data"] = nullptr;
    if (cfg.training_data) j["training_data"] = {{"name", cfg.training_data->name}, {"root", cfg.training_data->root.string()}};
    j["external_test_sets"] = ordered_json::array();
    for (const auto& e : cfg.external_test_sets)
        j["external_test_sets"].push_back({{"name", e.name}, {"root", e.root.string()}});
    j["refit_autoencoder_per_test_set"] = cfg.refit_autoencoder_per_test_set;
    j["dry_run"] = cfg.dry_run;
    return j;
}

namespace {

ExternalDataset dataset_from_json(const json& d, const std::string& where) {
    check_keys(d, where, {"name", "root"});
    ExternalDataset e;
    read(d, where, "name", e.name);
    std::string root;
    read(d, where, "root", root);
    if (root.empty()) throw ConfigError(where + ".root must be set");
    e.root = root;
    return e;
}

} // namespace

ExperimentConfig config_from_json(const json& j) {
    check_keys(j, "config",
               {"phantom", "preprocess", "fusion_strategy", "autoencoder", "augment", "backbones", "train", "ensemble",
                "ablation_axes", "seeds", "output_dir", "artifacts", "training_data", "external_test_sets",
                "refit_autoencoder_per_test_set", "dry_run"});
    ExperimentConfig cfg;
    if (j.contains("phantom")) {
        const auto& p = j["phantom"];
        check_keys(p, "phantom",
                   {"seed", "num_cancerous", "num_healthy", "image_size", "lesion_radius_range", "hotspot_intensity",
                    "decoy_rate", "noise_sigma"});
        auto& c = cfg.phantom;
        read(p, "phantom", "seed", c.seed);
        read(p, "phantom", "num_cancerous", c.num_cancerous);
        read(p, "phantom", "num_healthy", c.num_healthy);
        read(p, "phantom", "image_size", c.image_size);
        std::vector<double> range{c.lesion_radius_min, c.lesion_radius_max};
        read(p, "phantom", "lesion_radius_range", range);
        if (range.size() != 2) throw ConfigError("phantom.lesion_radius_range: expected [min, max]");
        c.lesion_radius_min = range[0];
        c.lesion_radius_max = range[1];
        read(p, "phantom", "hotspot_intensity", c.hotspot_intensity);
        read(p, "phantom", "decoy_rate", c.decoy_rate);
        read(p, "phantom", "noise_sigma", c.noise_sigma);
    }
    if (j.contains("preprocess")) {
        const auto& p = j["preprocess"];
        check_keys(p, "preprocess", {"hu_min", "hu_max", "target_size", "split_ratio", "split_seed"});
        auto& c = cfg.preprocess;
        read(p, "preprocess", "hu_min", c.hu_min);
        read(p, "preprocess", "hu_max", c.hu_max);
        read(p, "preprocess", "target_size", c.target_size);
        read(p, "preprocess", "split_ratio", c.split_ratio);
        read(p, "preprocess", "split_seed", c.split_seed);
    }
    if (j.contains("fusion_strategy")) {
        std::string s;
        read(j, "config", "fusion_strategy", s);
        cfg.fusion_strategy = fusion_strategy_from_string(s);
    }
    if (j.contains("autoencoder")) {
        const auto& a = j["autoencoder"];
        check_keys(a, "autoencoder",
                   {"encoder_channels", "decoder_channels", "kernel", "target", "pca_components", "steps", "batch_size",
                    "learning_rate", "decay", "seed"});
        auto& c = cfg.autoencoder;
        read(a, "autoencoder", "encoder_channels", c.spec.encoder_channels);
        read(a, "autoencoder", "decoder_channels", c.spec.decoder_channels);
        read(a, "autoencoder", "kernel", c.spec.kernel);
        std::string target(to_string(c.spec.target));
        read(a, "autoencoder", "target", target);
        c.spec.target = fusion_target_from_string(target);
        read(a, "autoencoder", "pca_components", c.pca_components);
        read(a, "autoencoder", "steps", c.train.steps);
        read(a, "autoencoder", "batch_size", c.train.batch_size);
        read(a, "autoencoder", "learning_rate", c.train.learning_rate);
        read(a, "autoencoder", "decay", c.train.decay);
        read(a, "autoencoder", "seed", c.train.seed);
    }
    if (j.contains("augment")) {
        const auto& a = j["augment"];
        check_keys(a, "augment",
                   {"rotation_deg", "width_shift", "height_shift", "zoom", "shear", "fold_cancerous", "fold_healthy",
                    "seed", "include_original"});
        auto& c = cfg.augment;
        read(a, "augment", "rotation_deg", c.rotation_deg);
        read(a, "augment", "width_shift", c.width_shift);
        read(a, "augment", "height_shift", c.height_shift);
        read(a, "augment", "zoom", c.zoom);
        read(a, "augment", "shear", c.shear);
        read(a, "augment", "fold_cancerous", c.fold_cancerous);
        read(a, "augment", "fold_healthy", c.fold_healthy);
        read(a, "augment", "seed", c.seed);
        read(a, "augment", "include_original", c.include_original);
    }
    if (j.contains("backbones")) {
        if (!j["backbones"].is_array()) throw ConfigError("backbones: expected a list");
        cfg.backbones.clear();
        for (const auto& b : j["backbones"]) {
            check_keys(b, "backbones[]", {"name", "depth", "base_width", "kernel", "input_channels"});
            BackboneSpec s;
            read(b, "backbones[]", "name", s.name);
            read(b, "backbones[]", "depth", s.depth);
            read(b, "backbones[]", "base_width", s.base_width);
            read(b, "backbones[]", "kernel", s.kernel);
            read(b, "backbones[]", "input_channels", s.input_channels);
            cfg.backbones.push_back(s);
        }
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        check_keys(t, "train", {"learning_rate", "decay", "batch_size", "max_epochs", "seed", "early_stop_patience"});
        auto& c = cfg.train;
        read(t, "train", "learning_rate", c.learning_rate);
        read(t, "train", "decay", c.decay);
        read(t, "train", "batch_size", c.batch_size);
        read(t, "train", "max_epochs", c.max_epochs);
        read(t, "train", "seed", c.seed);
        if (t.contains("early_stop_patience") && !t["early_stop_patience"].is_null()) {
            int patience = 0;
            read(t, "train", "early_stop_patience", patience);
            c.early_stop_patience = patience;
        }
    }
    if (j.contains("ensemble")) {
        const auto& e = j["ensemble"];
        check_keys(e, "ensemble", {"threshold", "tie_break"});
        read(e, "ensemble", "threshold", cfg.ensemble.threshold);
        std::string tb(to_string(cfg.ensemble.tie_break));
        read(e, "ensemble", "tie_break", tb);
        cfg.ensemble.tie_break = tie_break_from_string(tb);
    }
    if (j.contains("ablation_axes") && !j["ablation_axes"].is_null()) {
        const auto& a = j["ablation_axes"];
        check_keys(a, "ablation_axes", {"fusion", "modality"});
        AblationAxes axes;
        std::vector<std::string> fusion;
        read(a, "ablation_axes", "fusion", fusion);
        for (const auto& f : fusion) axes.fusion.push_back(fusion_strategy_from_string(f));
        read(a, "ablation_axes", "modality", axes.modality);
        cfg.ablation_axes = axes;
    }
    read(j, "config", "seeds", cfg.seeds);
    std::string out = cfg.output_dir.string();
    read(j, "config", "output_dir", out);
    cfg.output_dir = out;
    if (j.contains("artifacts")) {
        const auto& a = j["artifacts"];
        check_keys(a, "artifacts", {"augmented_slices", "fused_previews", "attention_overlays"});
        read(a, "artifacts", "augmented_slices", cfg.artifacts.augmented_slices);
        read(a, "artifacts", "fused_previews", cfg.artifacts.fused_previews);
        read(a, "artifacts", "attention_overlays", cfg.artifacts.attention_overlays);
    }
    if (j.contains("training_data") && !j["training_data"].is_null())
        cfg.training_data = dataset_from_json(j["training_data"], "training_data");
    if (j.contains("external_test_sets")) {
        if (!j["external_test_sets"].is_array()) throw ConfigError("external_test_sets: expected a list");
        for (const auto& e : j["external_test_sets"])
            cfg.external_test_sets.push_back(dataset_from_json(e, "external_test_sets[]"));
    }
    read(j, "config", "refit_autoencoder_per_test_set", cfg.refit_autoencoder_per_test_set);
    read(j, "config", "dry_run", cfg.dry_run);
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& ex) {
        throw ConfigError("config " + path.string() + ": " + ex.what());
    }
    return config_from_json(j);
}

void save_config(const fs::path& path, const ExperimentConfig& cfg) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << config_to_json(cfg).dump(2) << '\n';
}

std::string config_digest(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config_to_json(cfg).dump())));
    return buf;
}

std::string compute_device() {
    const char* v = std::getenv("DEMF_DEVICE");
    if (!v || !*v) return "cpu";
    std::string s(v);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "cpu") return s;
    throw CapabilityError("DEMF_DEVICE=" + std::string(v) + " requested, but only the cpu backend is built");
}

// ------------------------------------------------------------------ report

const ReportRow* EvaluationReport::find(std::uint64_t seed, const std::string& cell, const std::string& classifier,
                                        const std::string& test_set) const {
    for (const auto& r : rows)
        if (r.seed == seed && r.cell == cell && r.classifier == classifier && r.test_set == test_set) return &r;
    return nullptr;
}

namespace {

ordered_json metric_json(const std::optional<double>& v) {
    if (!v) return "undefined";
    return round4(*v);
}

std::optional<double> metric_from_json(const json& v) {
    if (v.is_string()) return std::nullopt;
    return v.get<double>();
}

ordered_json row_json(const ReportRow& r) {
    ordered_json j;
    j["seed"] = r.seed;
    j["test_set"] = r.test_set;
    j["cell"] = r.cell;
    j["classifier"] = r.classifier;
    j["member_index"] = r.member_index ? ordered_json(*r.member_index) : ordered_json(nullptr);
    j["confusion"] = {{"tp", r.confusion.tp}, {"tn", r.confusion.tn}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}};
    j["metrics"] = {{"accuracy", metric_json(r.metrics.accuracy)},
                    {"f1", metric_json(r.metrics.f1)},
                    {"precision", metric_json(r.metrics.precision)},
                    {"recall", metric_json(r.metrics.recall)}};
    return j;
}

ReportRow row_from_json(const json& j) {
    ReportRow r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.test_set = j.at("test_set").get<std::string>();
    r.cell = j.at("cell").get<std::string>();
    r.classifier = j.at("classifier").get<std::string>();
    if (!j.at("member_index").is_null()) r.member_index = j.at("member_index").get<int>();
    const auto& c = j.at("confusion");
    r.confusion = {c.at("tp").get<long>(), c.at("tn").get<long>(), c.at("fp").get<long>(), c.at("fn").get<long>()};
    const auto& m = j.at("metrics");
    r.metrics = {metric_from_json(m.at("accuracy")), metric_from_json(m.at("f1")), metric_from_json(m.at("precision")),
                 metric_from_json(m.at("recall"))};
    return r;
}

ordered_json localization_json(const LocalizationStats& s) {
    return {{"seed", s.seed},
            {"cell", s.cell},
            {"correct_positives", s.correct_positives},
            {"peak_in_box", s.peak_in_box},
            {"fraction", round4(s.fraction())}};
}

LocalizationStats localization_from_json(const json& j) {
    return {j.at("seed").get<std::uint64_t>(), j.at("cell").get<std::string>(), j.at("correct_positives").get<int>(),
            j.at("peak_in_box").get<int>()};
}

void write_json(const fs::path& path, const ordered_json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("missing " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& ex) {
        throw DataError(path.string() + ": " + ex.what());
    }
}

} // namespace

ordered_json EvaluationReport::to_json() const {
    ordered_json j;
    j["config_digest"] = config_digest;
    j["device"] = device;
    j["wall_time_seconds"] = wall_time_seconds;
    j["complete"] = complete;
    j["failed_stage"] = failed_stage ? ordered_json(*failed_stage) : ordered_json(nullptr);
    j["error"] = error;
    j["cells"] = cells;
    j["rows"] = ordered_json::array();
    for (const auto& r : rows) j["rows"].push_back(row_json(r));
    j["localization"] = ordered_json::array();
    for (const auto& s : localization) j["localization"].push_back(localization_json(s));
    j["isolation_audit"] = audit;
    return j;
}

EvaluationReport EvaluationReport::from_json(const json& j) {
    try {
        EvaluationReport r;
        r.config_digest = j.at("config_digest").get<std::string>();
        r.device = j.at("device").get<std::string>();
        r.wall_time_seconds = j.at("wall_time_seconds").get<double>();
        r.complete = j.at("complete").get<bool>();
        if (!j.at("failed_stage").is_null()) r.failed_stage = j.at("failed_stage").get<std::string>();
        r.error = j.at("error").get<std::string>();
        r.cells = j.at("cells").get<std::vector<std::string>>();
        for (const auto& row : j.at("rows")) r.rows.push_back(row_from_json(row));
        for (const auto& s : j.at("localization")) r.localization.push_back(localization_from_json(s));
        r.audit = j.at("isolation_audit").get<std::map<std::string, long>>();
        return r;
    } catch (const json::exception& ex) {
        throw DataError(std::string("evaluation report: ") + ex.what());
    }
}

void EvaluationReport::save(const fs::path& path) const { write_json(path, to_json()); }

EvaluationReport EvaluationReport::load(const fs::path& path) { return from_json(read_json(path)); }

std::string_view to_string(Stage s) noexcept {
    switch (s) {
    case Stage::generate: return "generate";
    case Stage::fuse: return "fuse";
    case Stage::train: return "train";
    case Stage::evaluate: return "evaluate";
    case Stage::explain: return "explain";
    case Stage::report: return "report";
    }
    return "?";
}

Stage stage_from_string(std::string_view s) {
    for (Stage st : {Stage::generate, Stage::fuse, Stage::train, Stage::evaluate, Stage::explain, Stage::report})
        if (to_string(st) == s) return st;
    throw ConfigError("unknown stage '" + std::string(s) + "'");
}

// ------------------------------------------------------------------ stages

fs::path seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
    return cfg.output_dir / ("seed_" + std::to_string(seed));
}

std::string cell_dir_name(const std::string& cell) {
    std::string out = "cell_" + cell;
    std::replace(out.begin(), out.end(), ':', '_');
    return out;
}

namespace {

// Streams of the per-run seed, one per consumer.
enum : std::uint64_t { kPhantomStream = 1, kSplitStream, kAugmentStream, kAutoencoderStream, kMemberStream };

std::uint64_t run_seed(std::uint64_t base, std::uint64_t seed, std::uint64_t stream) {
    return derive_seed(derive_seed(base, seed), stream);
}

std::vector<BackboneSpec> effective_backbones(const ExperimentConfig& cfg) {
    if (cfg.dry_run) return {linear_stub_backbone()};
    return cfg.backbones;
}

std::vector<SlicePair> load_external(const ExternalDataset& d, const PreprocessConfig& pp) {
    if (!fs::is_directory(d.root)) throw DataError("external dataset " + d.name + ": missing directory " + d.root.string());
    std::vector<fs::path> patients;
    for (const auto& e : fs::directory_iterator(d.root))
        if (e.is_directory()) patients.push_back(e.path());
    std::sort(patients.begin(), patients.end());
    std::vector<SlicePair> pairs;
    for (const auto& p : patients) {
        auto ps = pair_volumes(DirectoryVolume(p / "ct").load(), DirectoryVolume(p / "pet").load(), pp);
        for (auto& s : ps) pairs.push_back(std::move(s));
    }
    if (pairs.empty()) throw DataError("external dataset " + d.name + " has no slices");
    return pairs;
}

SlicePair resized(SlicePair p, int target) {
    if (p.ct.rows() == target && p.ct.cols() == target) return p;
    const double rs = static_cast<double>(target) / p.ct.rows(), cs = static_cast<double>(target) / p.ct.cols();
    p.ct = resize_slice(p.ct, target);
    p.pet = resize_slice(p.pet, target);
    clamp(p.ct);
    clamp(p.pet);
    if (p.tumor_bbox) p.tumor_bbox = p.tumor_bbox->scaled(rs, cs);
    return p;
}

std::vector<SlicePair> read_pairs(const fs::path& dir, const std::vector<std::string>& ids) {
    std::vector<SlicePair> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(read_slice_pair(dir, id));
    return out;
}

DatasetManifest test_only_manifest(const std::vector<SlicePair>& pairs) {
    DatasetManifest m;
    for (const auto& p : pairs) m.entries.push_back({p.slice_id, p.label, Split::test, SliceSource::external, std::nullopt});
    std::sort(m.entries.begin(), m.entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.slice_id < b.slice_id; });
    m.created_at = utc_timestamp();
    m.validate();
    return m;
}

std::vector<std::string> all_ids(const DatasetManifest& m) {
    std::vector<std::string> out;
    for (const auto& e : m.entries)
        if (!e.augmentation_parent) out.push_back(e.slice_id);
    return out;
}

// Images a cell's classifiers see for one slice list.
fs::path fused_dir(const fs::path& cell, const std::string& test_set) {
    return test_set == "primary" ? cell / "fused" : cell / "external" / test_set / "fused";
}

void write_ids(const fs::path& path, const std::vector<std::string>& ids) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& id : ids) out << id << '\n';
}

std::vector<std::string> read_ids(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("missing " + path.string());
    std::vector<std::string> ids;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) ids.push_back(line);
    return ids;
}

std::string safe_file_name(std::string id) {
    for (char& c : id)
        if (c == '#' || c == '/' || c == ':') c = '_';
    return id;
}

Image read_fused(const fs::path& dir, const std::string& id) { return read_array(dir / (safe_file_name(id) + ".dfa")); }

std::optional<Autoencoder> train_fusion_autoencoder(const ExperimentConfig& cfg, std::uint64_t seed, FusionStrategy kind,
                                                    const std::vector<SlicePair>& pairs, const std::string& tag) {
    std::vector<ImagePair> inputs;
    inputs.reserve(pairs.size());
    for (const auto& p : pairs)
        inputs.push_back(kind == FusionStrategy::pcae ? pca_reconstructed_pair(p, cfg.autoencoder.pca_components)
                                                      : ImagePair{p.ct, p.pet});
    AutoencoderTrainOptions opts = cfg.autoencoder.train;
    opts.seed = derive_seed(run_seed(opts.seed, seed, kAutoencoderStream), fnv1a(tag));
    if (cfg.dry_run) opts.steps = std::min(opts.steps, 5);
    return train_autoencoder(inputs, cfg.autoencoder.spec, opts);
}

std::set<FusionStrategy> autoencoder_kinds(const std::vector<std::string>& cells) {
    std::set<FusionStrategy> kinds;
    for (const auto& c : cells) {
        const auto s = fusion_strategy_from_string(strategy_of_cell(c));
        if (s == FusionStrategy::pcae || s == FusionStrategy::ae_only) kinds.insert(s);
    }
    return kinds;
}

void write_fused(const fs::path& dir, const std::vector<FusedSlice>& fused, int previews) {
    fs::create_directories(dir);
    for (const auto& f : fused)
        write_array(dir / (safe_file_name(f.parent_slice_id) + ".dfa"), f.image,
                    {{"strategy", std::string(to_string(f.strategy))}, {"parent_slice_id", f.parent_slice_id}});
    for (int i = 0; i < previews && i < static_cast<int>(fused.size()); ++i)
        write_gray_png(dir.parent_path() / "previews" / (safe_file_name(fused[i].parent_slice_id) + ".png"), fused[i].image);
}

} // namespace

namespace stages {

void generate(const ExperimentConfig& cfg, std::uint64_t seed) {
    const fs::path dir = seed_dir(cfg, seed);
    fs::create_directories(dir);
    std::vector<SlicePair> pairs;
    if (cfg.training_data) {
        pairs = load_external(*cfg.training_data, cfg.preprocess);
    } else {
        PhantomConfig pc = cfg.phantom;
        pc.seed = run_seed(pc.seed, seed, kPhantomStream);
        for (auto& p : generate_phantom(pc)) pairs.push_back(resized(std::move(p), cfg.preprocess.target_size));
    }
    for (const auto& p : pairs) validate(p);

    PreprocessConfig pp = cfg.preprocess;
    pp.split_seed = run_seed(pp.split_seed, seed, kSplitStream);
    DatasetManifest manifest = split_dataset(pairs, pp);
    manifest.config_digest = config_digest(cfg);
    if (cfg.training_data)
        for (auto& e : manifest.entries) e.source = SliceSource::external;
    fs::remove_all(dir / "slices");
    write_slice_pairs(dir / "slices", pairs);
    manifest.save(dir / "manifest.json");

    for (const auto& ext : cfg.external_test_sets) {
        const auto ext_pairs = load_external(ext, cfg.preprocess);
        const fs::path edir = dir / "external" / ext.name;
        fs::remove_all(edir);
        write_slice_pairs(edir / "slices", ext_pairs);
        auto m = test_only_manifest(ext_pairs);
        m.config_digest = manifest.config_digest;
        m.save(edir / "manifest.json");
    }
}

void fuse(const ExperimentConfig& cfg, std::uint64_t seed) {
    const fs::path dir = seed_dir(cfg, seed);
    const auto manifest = DatasetManifest::load(dir / "manifest.json");
    const auto pairs = read_pairs(dir / "slices", all_ids(manifest));
    std::vector<SlicePair> train_pairs;
    for (const auto& p : pairs)
        if (manifest.find(p.slice_id)->split == Split::train) train_pairs.push_back(p);

    const auto cells = cfg.cells();
    std::map<FusionStrategy, Autoencoder> models;
    for (auto kind : autoencoder_kinds(cells)) {
        const std::string tag(to_string(kind));
        auto ae = train_fusion_autoencoder(cfg, seed, kind, train_pairs, tag);
        ae->save(dir / ("autoencoder_" + tag));
        models.emplace(kind, std::move(*ae));
    }
    auto fusion_models = [&](const std::map<FusionStrategy, Autoencoder>& m) {
        FusionModels fm;
        fm.pca_components = cfg.autoencoder.pca_components;
        if (auto it = m.find(FusionStrategy::pcae); it != m.end()) fm.pcae = &it->second;
        if (auto it = m.find(FusionStrategy::ae_only); it != m.end()) fm.ae_only = &it->second;
        return fm;
    };

    for (const auto& cell : cells) {
        const fs::path cdir = dir / cell_dir_name(cell);
        fs::remove_all(cdir / "fused");
        fs::remove_all(cdir / "previews");
        const auto strategy = fusion_strategy_from_string(strategy_of_cell(cell));
        write_fused(cdir / "fused", fuse_all(pairs, strategy, fusion_models(models)), cfg.artifacts.fused_previews);
    }

    for (const auto& ext : cfg.external_test_sets) {
        const fs::path edir = dir / "external" / ext.name;
        const auto m = DatasetManifest::load(edir / "manifest.json");
        const auto ext_pairs = read_pairs(edir / "slices", all_ids(m));
        std::map<FusionStrategy, Autoencoder> refit;
        if (cfg.refit_autoencoder_per_test_set)
            for (auto kind : autoencoder_kinds(cells))
                refit.emplace(kind, std::move(*train_fusion_autoencoder(cfg, seed, kind, ext_pairs,
                                                                        std::string(to_string(kind)) + "@" + ext.name)));
        const auto fm = fusion_models(cfg.refit_autoencoder_per_test_set ? refit : models);
        for (const auto& cell : cells) {
            const fs::path out = fused_dir(dir / cell_dir_name(cell), ext.name);
            fs::remove_all(out);
            write_fused(out, fuse_all(ext_pairs, fusion_strategy_from_string(strategy_of_cell(cell)), fm), 0);
        }
    }
}

void train(const ExperimentConfig& cfg, std::uint64_t seed) {
    const fs::path dir = seed_dir(cfg, seed);
    auto manifest = DatasetManifest::load(dir / "manifest.json");
    const auto train_ids = manifest.ids(Split::train, false);
    const auto backbones = effective_backbones(cfg);

    AugmentPolicy policy = cfg.augment;
    policy.seed = run_seed(policy.seed, seed, kAugmentStream);

    bool lineage_recorded = false;
    for (const auto& cell : cfg.cells()) {
        const fs::path cdir = dir / cell_dir_name(cell);
        std::vector<TrainingSlice> base;
        base.reserve(train_ids.size());
        for (const auto& id : train_ids) {
            const auto* e = manifest.find(id);
            TrainingSlice s;
            s.slice_id = id;
            s.fused = FusedSlice{read_fused(cdir / "fused", id), fusion_strategy_from_string(strategy_of_cell(cell)), id};
            s.label = e->label;
            s.split = e->split;
            base.push_back(std::move(s));
        }
        const auto augmented = augment_training_set(base, policy);

        if (!lineage_recorded) {
            manifest.entries.erase(std::remove_if(manifest.entries.begin(), manifest.entries.end(),
                                                  [](const ManifestEntry& e) { return e.augmentation_parent.has_value(); }),
                                   manifest.entries.end());
            for (const auto& s : augmented.slices)
                if (s.augmentation_parent)
                    manifest.entries.push_back(
                        {s.slice_id, s.label, Split::train, manifest.find(*s.augmentation_parent)->source, s.augmentation_parent});
            manifest.validate();
            manifest.save(dir / "manifest.json");
            ordered_json log = ordered_json::array();
            for (const auto& t : augmented.log)
                log.push_back({{"slice_id", t.slice_id}, {"parent", t.parent_id}, {"transform", std::string(to_string(t.kind))},
                               {"parameter", t.parameter}});
            write_json(dir / "augmentation_log.json", log);
            lineage_recorded = true;
        }
        if (cfg.artifacts.augmented_slices) {
            fs::remove_all(cdir / "augmented");
            fs::create_directories(cdir / "augmented");
            for (const auto& s : augmented.slices)
                if (s.augmentation_parent)
                    write_array(cdir / "augmented" / (safe_file_name(s.slice_id) + ".dfa"), s.fused.image,
                                {{"label", std::string(to_string(s.label))}, {"augmentation_parent", *s.augmentation_parent}});
        }

        std::vector<std::string> used;
        for (const auto& s : augmented.slices) used.push_back(s.slice_id);
        fs::create_directories(cdir);
        write_ids(cdir / "training_ids.txt", used);

        std::vector<Classifier> members;
        ordered_json history = ordered_json::array();
        for (std::size_t m = 0; m < backbones.size(); ++m) {
            TrainOptions opts = cfg.train;
            opts.seed = derive_seed(run_seed(opts.seed, seed, kMemberStream), m);
            members.push_back(train_member(backbones[m], augmented.slices, opts));
            history.push_back({{"member", backbones[m].name}, {"loss_history", members.back().loss_history}});
        }
        write_json(cdir / "training.json", history);
        fs::remove_all(cdir / "ensemble");
        EnsembleModel(std::move(members), cfg.ensemble.threshold, cfg.ensemble.tie_break).save(cdir / "ensemble");
    }
}

std::vector<ReportRow> evaluate(const ExperimentConfig& cfg, std::uint64_t seed, std::map<std::string, long>& audit) {
    const fs::path dir = seed_dir(cfg, seed);
    const auto manifest = DatasetManifest::load(dir / "manifest.json");
    manifest.validate();
    const auto test_ids = manifest.ids(Split::test, true);
    const std::set<std::string> test_set(test_ids.begin(), test_ids.end());

    std::vector<ReportRow> rows;
    auto evaluate_set = [&](const EnsembleModel& model, const std::string& cell, const std::string& name,
                            const fs::path& fdir, const DatasetManifest& m, const std::vector<std::string>& ids) {
        std::vector<Image> images;
        std::vector<int> truth;
        for (const auto& id : ids) {
            images.push_back(read_fused(fdir, id));
            truth.push_back(to_int(m.find(id)->label));
        }
        const auto pred = predict_ensemble(model, images);
        for (std::size_t j = 0; j < model.size(); ++j) {
            std::vector<int> labels;
            for (const auto& v : pred.votes) labels.push_back(v[j]);
            const auto cm = confusion(labels, truth);
            rows.push_back({seed, name, cell, model.members()[j].spec().name, static_cast<int>(j), cm, compute_metrics(cm)});
        }
        const auto cm = confusion(pred.labels, truth);
        rows.push_back({seed, name, cell, "ensemble", std::nullopt, cm, compute_metrics(cm)});
        const fs::path csv = name == "primary" ? dir / cell_dir_name(cell) / "votes.csv"
                                               : dir / cell_dir_name(cell) / "external" / name / "votes.csv";
        write_vote_csv(csv, ids, pred, truth);
    };

    for (const auto& cell : cfg.cells()) {
        const fs::path cdir = dir / cell_dir_name(cell);

        // Lineage audit: what trained this cell's members versus what it is
        // evaluated on.
        long bad_training = 0, test_in_training = 0, augmented_in_test = 0, test_not_test = 0;
        for (const auto& id : read_ids(cdir / "training_ids.txt")) {
            const auto* e = manifest.find(id);
            const std::string root = e && e->augmentation_parent ? *e->augmentation_parent : id;
            if (!e || e->split != Split::train) ++bad_training;
            if (test_set.count(root) || test_set.count(id)) ++test_in_training;
        }
        for (const auto& id : test_ids) {
            const auto* e = manifest.find(id);
            if (e->augmentation_parent || id.find("#aug") != std::string::npos) ++augmented_in_test;
            if (e->split != Split::test) ++test_not_test;
        }
        audit["training_slices_outside_train_split"] += bad_training;
        audit["test_slices_in_training"] += test_in_training;
        audit["augmented_slices_in_test"] += augmented_in_test;
        audit["evaluated_slices_outside_test_split"] += test_not_test;
        if (bad_training || test_in_training || augmented_in_test || test_not_test)
            throw ContaminationError("isolation audit failed for cell " + cell + " (seed " + std::to_string(seed) + ")");

        const auto model = EnsembleModel::load(cdir / "ensemble");
        evaluate_set(model, cell, "primary", cdir / "fused", manifest, test_ids);
        for (const auto& ext : cfg.external_test_sets) {
            const auto m = DatasetManifest::load(dir / "external" / ext.name / "manifest.json");
            evaluate_set(model, cell, ext.name, fused_dir(cdir, ext.name), m, all_ids(m));
        }
    }

    ordered_json j;
    j["rows"] = ordered_json::array();
    for (const auto& r : rows) j["rows"].push_back(row_json(r));
    j["isolation_audit"] = audit;
    write_json(dir / "evaluation.json", j);
    return rows;
}

std::vector<LocalizationStats> explain(const ExperimentConfig& cfg, std::uint64_t seed) {
    const fs::path dir = seed_dir(cfg, seed);
    const auto manifest = DatasetManifest::load(dir / "manifest.json");
    std::vector<LocalizationStats> out;
    for (const auto& cell : cfg.cells()) {
        const fs::path cdir = dir / cell_dir_name(cell);
        const auto model = EnsembleModel::load(cdir / "ensemble");
        const bool has_features = std::all_of(model.members().begin(), model.members().end(),
                                              [](const Classifier& c) { return c.feature_layer() >= 0; });
        LocalizationStats stats{seed, cell, 0, 0};
        if (has_features) {
            fs::remove_all(cdir / "attention");
            int overlays = 0;
            for (const auto& id : manifest.ids(Split::test, false)) {
                if (manifest.find(id)->label != Label::cancerous) continue;
                const Image fused = read_fused(cdir / "fused", id);
                const auto att = ensemble_attention(model, fused, id);
                if (att.predicted_label != 1) continue;
                const auto pair = read_slice_pair(dir / "slices", id);
                ++stats.correct_positives;
                if (pair.tumor_bbox && !att.degenerate && peak_in_box(att.map, *pair.tumor_bbox, 4)) ++stats.peak_in_box;
                if (overlays++ < cfg.artifacts.attention_overlays)
                    write_attention_overlay(cdir / "attention" / (safe_file_name(id) + ".png"), pair, fused, att);
            }
        }
        out.push_back(stats);
    }
    ordered_json j = ordered_json::array();
    for (const auto& s : out) j.push_back(localization_json(s));
    write_json(dir / "localization.json", j);
    return out;
}

} // namespace stages

// ------------------------------------------------------------------ report

namespace {

// Grouped bars: one group per classifier, one bar per cell.
void write_accuracy_chart(const fs::path& png, const std::vector<std::string>& classifiers,
                          const std::vector<std::string>& cells, const std::vector<std::vector<double>>& values,
                          const std::string& title) {
    const int bar = 14, gap = 18, plot_h = 220, left = 50, top = 30, bottom = 70;
    const int group_w = std::max(static_cast<int>(cells.size()) * bar + gap, 84);
    const int legend_w = 170;
    const int width = left + static_cast<int>(classifiers.size()) * group_w + legend_w;
    Canvas c(width, top + plot_h + bottom);
    const Rgb palette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
                           {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};
    const Rgb black{0, 0, 0}, grid{220, 220, 220};
    c.text(left, 8, title, black);
    for (int t = 0; t <= 4; ++t) {
        const int y = top + plot_h - t * plot_h / 4;
        c.line(left, y, width - legend_w, y, grid);
        char buf[8];
        std::snprintf(buf, sizeof buf, "%.2f", t * 0.25);
        c.text(4, y - 3, buf, black);
    }
    c.line(left, top, left, top + plot_h, black);
    c.line(left, top + plot_h, width - legend_w, top + plot_h, black);
    for (std::size_t g = 0; g < classifiers.size(); ++g) {
        const int gx = left + gap / 2 + static_cast<int>(g) * group_w;
        for (std::size_t s = 0; s < cells.size(); ++s) {
            const double v = std::clamp(values[s][g], 0.0, 1.0);
            const int h = static_cast<int>(std::lround(v * plot_h));
            const int x = gx + static_cast<int>(s) * bar;
            c.fill_rect(x, top + plot_h - h, x + bar - 2, top + plot_h, palette[s % 8]);
        }
        std::string label = classifiers[g];
        const std::size_t max_chars = static_cast<std::size_t>(2 * group_w / 6 - 1);
        if (label.size() > max_chars) label = label.substr(0, max_chars);
        c.text(gx, top + plot_h + 6 + (g % 2) * 12, label, black);
    }
    for (std::size_t s = 0; s < cells.size(); ++s) {
        const int y = top + static_cast<int>(s) * 14;
        const int x = width - legend_w + 10;
        c.fill_rect(x, y, x + 9, y + 8, palette[s % 8]);
        c.text(x + 14, y + 1, cells[s], black);
    }
    c.write_png(png);
}

} // namespace

EvaluationReport assemble_report(const ExperimentConfig& cfg, double wall_time_seconds) {
    EvaluationReport report;
    report.config_digest = config_digest(cfg);
    report.device = compute_device();
    report.wall_time_seconds = wall_time_seconds;
    report.cells = cfg.cells();
    for (auto seed : cfg.seeds) {
        const fs::path dir = seed_dir(cfg, seed);
        const auto ev = read_json(dir / "evaluation.json");
        for (const auto& r : ev.at("rows")) report.rows.push_back(row_from_json(r));
        for (const auto& [k, v] : ev.at("isolation_audit").items()) report.audit[k] += v.get<long>();
        if (fs::exists(dir / "localization.json"))
            for (const auto& s : read_json(dir / "localization.json")) report.localization.push_back(localization_from_json(s));
    }

    std::vector<std::string> classifiers;
    for (const auto& b : effective_backbones(cfg)) classifiers.push_back(b.name);
    classifiers.push_back("ensemble");
    std::vector<std::string> test_sets{"primary"};
    for (const auto& e : cfg.external_test_sets) test_sets.push_back(e.name);
    std::vector<std::string> missing;
    for (auto seed : cfg.seeds)
        for (const auto& cell : report.cells)
            for (const auto& ts : test_sets)
                for (const auto& cl : classifiers) {
                    std::size_t n = 0;
                    for (const auto& r : report.rows)
                        n += r.seed == seed && r.cell == cell && r.classifier == cl && r.test_set == ts;
                    if (n != 1) missing.push_back(std::to_string(seed) + "/" + cell + "/" + ts + "/" + cl);
                }
    if (!missing.empty())
        throw DataError("report incomplete: " + std::to_string(missing.size()) + " (seed, cell, classifier) keys missing or duplicated, first " +
                        missing.front());
    report.complete = true;
    return report;
}

void write_report_outputs(const ExperimentConfig& cfg, const EvaluationReport& report) {
    report.save(cfg.output_dir / "report.json");

    std::ofstream csv(cfg.output_dir / "report.csv");
    if (!csv) throw DataError("cannot write report.csv");
    csv << "seed,test_set,cell,classifier,tp,tn,fp,fn,accuracy,f1,precision,recall\n";
    for (const auto& r : report.rows)
        csv << r.seed << ',' << r.test_set << ',' << r.cell << ',' << r.classifier << ',' << r.confusion.tp << ','
            << r.confusion.tn << ',' << r.confusion.fp << ',' << r.confusion.fn << ',' << format_metric(r.metrics.accuracy)
            << ',' << format_metric(r.metrics.f1) << ',' << format_metric(r.metrics.precision) << ','
            << format_metric(r.metrics.recall) << '\n';

    std::vector<std::string> classifiers;
    for (const auto& r : report.rows)
        if (std::find(classifiers.begin(), classifiers.end(), r.classifier) == classifiers.end())
            classifiers.push_back(r.classifier);
    std::vector<std::string> test_sets;
    for (const auto& r : report.rows)
        if (std::find(test_sets.begin(), test_sets.end(), r.test_set) == test_sets.end()) test_sets.push_back(r.test_set);

    for (const auto& ts : test_sets) {
        // Mean accuracy over seeds, undefined counted as absent.
        std::vector<std::vector<double>> values(report.cells.size(), std::vector<double>(classifiers.size(), 0.0));
        const std::string stem = ts == "primary" ? "accuracy" : "accuracy_" + ts;
        fs::create_directories(cfg.output_dir / "plots");
        std::ofstream pcsv(cfg.output_dir / "plots" / (stem + ".csv"));
        if (!pcsv) throw DataError("cannot write " + stem + ".csv");
        pcsv << "cell,classifier,mean_accuracy,seeds\n";
        for (std::size_t s = 0; s < report.cells.size(); ++s)
            for (std::size_t g = 0; g < classifiers.size(); ++g) {
                double sum = 0.0;
                int n = 0;
                for (const auto& r : report.rows)
                    if (r.test_set == ts && r.cell == report.cells[s] && r.classifier == classifiers[g] && r.metrics.accuracy) {
                        sum += *r.metrics.accuracy;
                        ++n;
                    }
                values[s][g] = n ? sum / n : 0.0;
                pcsv << report.cells[s] << ',' << classifiers[g] << ',' << format_metric(n ? std::optional(values[s][g]) : std::nullopt)
                     << ',' << n << '\n';
            }
        write_accuracy_chart(cfg.output_dir / "plots" / (stem + ".png"), classifiers, report.cells, values,
                             "ACCURACY (" + ts + ")");
    }
}

// ------------------------------------------------------------------ pipeline

namespace {

template <typename F>
auto tagged(Stage stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& ex) {
        throw StageError(std::string(to_string(stage)), ex.what());
    }
}

void write_partial(const ExperimentConfig& cfg, const StageError& err, double wall) {
    EvaluationReport partial;
    partial.config_digest = config_digest(cfg);
    partial.wall_time_seconds = wall;
    partial.cells = cfg.cells();
    partial.complete = false;
    partial.failed_stage = err.stage();
    partial.error = err.what();
    partial.save(cfg.output_dir / "report.json");
    std::ofstream(cfg.output_dir / "INCOMPLETE") << err.stage() << ": " << err.what() << '\n';
}

} // namespace

EvaluationReport run_pipeline(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
    fs::create_directories(cfg.output_dir);
    fs::remove(cfg.output_dir / "INCOMPLETE");
    save_config(cfg.output_dir / "config.json", cfg);
    try {
        tagged(Stage::generate, [] { return compute_device(); });
        for (auto seed : cfg.seeds) {
            tagged(Stage::generate, [&] { stages::generate(cfg, seed); });
            tagged(Stage::fuse, [&] { stages::fuse(cfg, seed); });
            tagged(Stage::train, [&] { stages::train(cfg, seed); });
            std::map<std::string, long> audit;
            tagged(Stage::evaluate, [&] { return stages::evaluate(cfg, seed, audit); });
            tagged(Stage::explain, [&] { return stages::explain(cfg, seed); });
        }
        auto report = tagged(Stage::report, [&] { return assemble_report(cfg, elapsed()); });
        tagged(Stage::report, [&] { write_report_outputs(cfg, report); });
        return report;
    } catch (const StageError& err) {
        write_partial(cfg, err, elapsed());
        throw;
    }
}

EvaluationReport run_ablation(const ExperimentConfig& cfg) {
    if (!cfg.ablation_axes || cfg.ablation_axes->empty()) throw ConfigError("ablation requires non-empty ablation_axes");
    return run_pipeline(cfg);
}

} // namespace demf
