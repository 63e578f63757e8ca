#include "demf/ingest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "demf/array_io.hpp"
#include "demf/error.hpp"
#include "demf/rng.hpp"
#include "json.hpp"

namespace demf {

using ordered_json = nlohmann::ordered_json;

void PreprocessConfig::validate() const {
    if (!(hu_min < hu_max)) throw ConfigError("preprocess: hu_min must be below hu_max");
    if (target_size < 32) throw ConfigError("preprocess: target_size must be >= 32");
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("preprocess: split_ratio must lie in (0,1)");
}

Image normalize_hu(const Image& raw, const PreprocessConfig& cfg) {
    cfg.validate();
    Image out(raw.rows(), raw.cols());
    const double span = cfg.hu_max - cfg.hu_min;
    auto src = raw.pixels();
    auto dst = out.pixels();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double v = src[i];
        if (!std::isfinite(v)) throw DataError("normalize_hu: non-finite input value");
        dst[i] = static_cast<float>((std::clamp(v, cfg.hu_min, cfg.hu_max) - cfg.hu_min) / span);
    }
    return out;
}

std::vector<Image> normalize_pet_volume(const std::vector<Image>& raw) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& img : raw)
        for (float v : img.pixels()) {
            if (!std::isfinite(v)) throw DataError("normalize_pet_volume: non-finite input value");
            lo = std::min(lo, static_cast<double>(v));
            hi = std::max(hi, static_cast<double>(v));
        }
    std::vector<Image> out;
    out.reserve(raw.size());
    for (const auto& img : raw) {
        Image n(img.rows(), img.cols());
        if (hi > lo) {
            auto s = img.pixels();
            auto d = n.pixels();
            for (std::size_t i = 0; i < s.size(); ++i) d[i] = static_cast<float>((s[i] - lo) / (hi - lo));
        }
        out.push_back(std::move(n));
    }
    return out;
}

Image resize_slice(const Image& img, int target) { return resize_slice(img, target, target); }

Image resize_slice(const Image& img, int target_rows, int target_cols) {
    if (img.empty()) throw DataError("resize_slice: empty grid");
    if (target_rows < 1 || target_cols < 1) throw ConfigError("resize_slice: target must be positive");
    if (img.rows() == target_rows && img.cols() == target_cols) return img;

    struct Tap {
        int i0, i1;
        float w;
    };
    auto taps = [](int src, int dst) {
        std::vector<Tap> t(static_cast<std::size_t>(dst));
        const double scale = static_cast<double>(src) / dst;
        for (int i = 0; i < dst; ++i) {
            const double s = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(src - 1));
            const int i0 = static_cast<int>(std::floor(s));
            t[i] = {i0, std::min(i0 + 1, src - 1), static_cast<float>(s - i0)};
        }
        return t;
    };
    const auto ry = taps(img.rows(), target_rows);
    const auto rx = taps(img.cols(), target_cols);
    Image out(target_rows, target_cols);
    for (int y = 0; y < target_rows; ++y)
        for (int x = 0; x < target_cols; ++x) {
            const Tap& ty = ry[y];
            const Tap& tx = rx[x];
            const float top = img(ty.i0, tx.i0) * (1.0f - tx.w) + img(ty.i0, tx.i1) * tx.w;
            const float bot = img(ty.i1, tx.i0) * (1.0f - tx.w) + img(ty.i1, tx.i1) * tx.w;
            out(y, x) = top * (1.0f - ty.w) + bot * ty.w;
        }
    return out;
}

// ------------------------------------------------------------------ manifest

namespace {

std::string_view to_string(SliceSource s) { return s == SliceSource::phantom ? "phantom" : "external"; }

SliceSource source_from_string(const std::string& s) {
    if (s == "phantom") return SliceSource::phantom;
    if (s == "external") return SliceSource::external;
    throw DataError("unknown slice source '" + s + "'");
}

} // namespace

void DatasetManifest::validate() const {
    std::map<std::string, const ManifestEntry*> by_id;
    for (const auto& e : entries)
        if (!by_id.emplace(e.slice_id, &e).second) throw DataError("manifest: duplicate slice_id " + e.slice_id);
    for (const auto& e : entries) {
        if (!e.augmentation_parent) continue;
        if (e.split != Split::train) throw DataError("manifest: augmented entry " + e.slice_id + " is not in train");
        auto it = by_id.find(*e.augmentation_parent);
        if (it == by_id.end()) throw DataError("manifest: " + e.slice_id + " has an unknown augmentation_parent");
        if (it->second->split != Split::train)
            throw DataError("manifest: " + e.slice_id + " derives from a non-train slice");
    }
}

const ManifestEntry* DatasetManifest::find(const std::string& slice_id) const {
    for (const auto& e : entries)
        if (e.slice_id == slice_id) return &e;
    return nullptr;
}

std::vector<std::string> DatasetManifest::ids(Split split, bool include_augmented) const {
    std::vector<std::string> out;
    for (const auto& e : entries)
        if (e.split == split && (include_augmented || !e.augmentation_parent)) out.push_back(e.slice_id);
    return out;
}

std::size_t DatasetManifest::count(Split split, Label label) const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) {
        return e.split == split && e.label == label && !e.augmentation_parent;
    }));
}

std::string DatasetManifest::to_json() const {
    ordered_json j;
    j["created_at"] = created_at;
    j["config_digest"] = config_digest;
    ordered_json list = ordered_json::array();
    for (const auto& e : entries) {
        ordered_json je;
        je["slice_id"] = e.slice_id;
        je["label"] = std::string(demf::to_string(e.label));
        je["split"] = std::string(demf::to_string(e.split));
        je["source"] = std::string(to_string(e.source));
        je["augmentation_parent"] = e.augmentation_parent ? ordered_json(*e.augmentation_parent) : ordered_json(nullptr);
        list.push_back(std::move(je));
    }
    j["entries"] = std::move(list);
    return j.dump(2);
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
    DatasetManifest m;
    try {
        const auto j = nlohmann::json::parse(text);
        m.created_at = j.at("created_at").get<std::string>();
        m.config_digest = j.at("config_digest").get<std::string>();
        for (const auto& je : j.at("entries")) {
            ManifestEntry e;
            e.slice_id = je.at("slice_id").get<std::string>();
            e.label = label_from_string(je.at("label").get<std::string>());
            e.split = split_from_string(je.at("split").get<std::string>());
            e.source = source_from_string(je.at("source").get<std::string>());
            if (je.contains("augmentation_parent") && !je["augmentation_parent"].is_null())
                e.augmentation_parent = je["augmentation_parent"].get<std::string>();
            m.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("manifest: ") + ex.what());
    }
    m.validate();
    return m;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_json() << '\n';
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

DatasetManifest split_dataset(const std::vector<SlicePair>& pairs, const PreprocessConfig& cfg) {
    cfg.validate();
    if (pairs.empty()) throw DegenerateInputError("split_dataset: no slices");

    std::set<std::string> seen;
    std::vector<std::string> by_label[2];
    std::map<std::string, const SlicePair*> lookup;
    for (const auto& p : pairs) {
        if (!seen.insert(p.slice_id).second) throw DataError("split_dataset: duplicate slice_id " + p.slice_id);
        by_label[to_int(p.label)].push_back(p.slice_id);
        lookup[p.slice_id] = &p;
    }
    for (int l = 0; l < 2; ++l)
        if (by_label[l].size() < 2)
            throw DegenerateInputError("split_dataset: fewer than 2 slices labelled " +
                                       std::string(to_string(static_cast<Label>(l))));

    std::map<std::string, Split> assignment;
    for (int l = 0; l < 2; ++l) {
        auto ids = by_label[l];
        std::sort(ids.begin(), ids.end());
        Rng rng(derive_seed(cfg.split_seed, static_cast<std::uint64_t>(l)));
        rng.shuffle(std::span<std::string>(ids));
        // The epsilon keeps exact products such as 0.8 * 80 from rounding down.
        const auto n_train = static_cast<std::size_t>(std::floor(cfg.split_ratio * ids.size() + 1e-9));
        for (std::size_t i = 0; i < ids.size(); ++i) assignment[ids[i]] = i < n_train ? Split::train : Split::test;
    }

    DatasetManifest m;
    m.created_at = utc_timestamp();
    for (const auto& [id, split] : assignment) {
        const SlicePair* p = lookup.at(id);
        const auto src = p->modality_meta.find("source");
        const SliceSource source =
            src != p->modality_meta.end() && src->second == "external" ? SliceSource::external : SliceSource::phantom;
        m.entries.push_back({id, p->label, split, source, std::nullopt});
    }
    std::ostringstream digest;
    digest << "split:" << cfg.split_seed << ':' << cfg.split_ratio << ':' << pairs.size();
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(digest.str())));
    m.config_digest = hex;
    return m;
}

// ------------------------------------------------------------------ storage

namespace {

std::string encode_bbox(const BoundingBox& b) {
    return std::to_string(b.row0) + "," + std::to_string(b.col0) + "," + std::to_string(b.row1) + "," +
           std::to_string(b.col1);
}

BoundingBox decode_bbox(const std::string& s) {
    BoundingBox b;
    char sep;
    std::istringstream is(s);
    if (!(is >> b.row0 >> sep >> b.col0 >> sep >> b.row1 >> sep >> b.col1))
        throw DataError("malformed bounding box '" + s + "'");
    return b;
}

} // namespace

void write_slice_pairs(const std::filesystem::path& dir, const std::vector<SlicePair>& pairs) {
    for (const auto& p : pairs) {
        validate(p);
        ArrayMeta meta{{"slice_id", p.slice_id}, {"label", std::string(to_string(p.label))}, {"modality", "ct"}};
        if (p.tumor_bbox) meta["tumor_bbox"] = encode_bbox(*p.tumor_bbox);
        for (const auto& [k, v] : p.modality_meta) meta["meta." + k] = v;
        write_array(dir / "ct" / (p.slice_id + ".dfa"), p.ct, meta);
        write_array(dir / "pet" / (p.slice_id + ".dfa"), p.pet, {{"slice_id", p.slice_id}, {"modality", "pet"}});
    }
}

SlicePair read_slice_pair(const std::filesystem::path& dir, const std::string& slice_id) {
    const auto ct_path = dir / "ct" / (slice_id + ".dfa");
    SlicePair p;
    p.ct = read_array(ct_path);
    p.pet = read_array(dir / "pet" / (slice_id + ".dfa"));
    p.slice_id = slice_id;
    const auto meta = read_array_meta(ct_path);
    if (auto it = meta.find("label"); it != meta.end()) p.label = label_from_string(it->second);
    if (auto it = meta.find("tumor_bbox"); it != meta.end()) p.tumor_bbox = decode_bbox(it->second);
    for (const auto& [k, v] : meta)
        if (k.rfind("meta.", 0) == 0) p.modality_meta[k.substr(5)] = v;
    validate(p);
    return p;
}

// ------------------------------------------------------- external volumes

Volume DirectoryVolume::load() const {
    std::ifstream in(dir_ / "volume.json");
    if (!in) throw DataError("missing volume.json in " + dir_.string());
    Volume v;
    try {
        const auto j = nlohmann::json::parse(in);
        v.volume_id = j.at("volume_id").get<std::string>();
        v.modality = j.at("modality").get<std::string>();
        if (v.modality != "ct" && v.modality != "pet") throw DataError("volume modality must be ct or pet");
        for (const auto& js : j.at("slices")) {
            VolumeSlice s;
            s.raw = read_array(dir_ / js.at("file").get<std::string>());
            if (js.contains("label")) s.label = label_from_string(js["label"].get<std::string>());
            if (js.contains("tumor_bbox")) {
                const auto b = js["tumor_bbox"].get<std::vector<int>>();
                if (b.size() != 4) throw DataError("tumor_bbox needs 4 integers");
                s.tumor_bbox = BoundingBox{b[0], b[1], b[2], b[3]};
            }
            v.slices.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("volume.json: ") + ex.what());
    }
    return v;
}

void write_volume(const std::filesystem::path& dir, const Volume& volume) {
    ordered_json j;
    j["volume_id"] = volume.volume_id;
    j["modality"] = volume.modality;
    ordered_json slices = ordered_json::array();
    for (std::size_t i = 0; i < volume.slices.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "s%04zu.dfa", i);
        write_array(dir / name, volume.slices[i].raw);
        ordered_json js;
        js["file"] = name;
        if (volume.slices[i].label) js["label"] = std::string(to_string(*volume.slices[i].label));
        if (const auto& b = volume.slices[i].tumor_bbox) js["tumor_bbox"] = {b->row0, b->col0, b->row1, b->col1};
        slices.push_back(std::move(js));
    }
    j["slices"] = std::move(slices);
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "volume.json");
    out << j.dump(2) << '\n';
}

std::vector<SlicePair> pair_volumes(const Volume& ct, const Volume& pet, const PreprocessConfig& cfg) {
    cfg.validate();
    if (ct.modality != "ct" || pet.modality != "pet") throw DataError("pair_volumes: expected a CT and a PET volume");
    if (ct.slices.size() != pet.slices.size())
        throw DataError("pair_volumes: CT and PET stacks differ in slice count");

    std::vector<Image> pet_raw;
    for (const auto& s : pet.slices) pet_raw.push_back(s.raw);
    const auto pet_norm = normalize_pet_volume(pet_raw);

    std::vector<SlicePair> out;
    for (std::size_t i = 0; i < ct.slices.size(); ++i) {
        const auto& cs = ct.slices[i];
        if (!cs.label) throw DataError("pair_volumes: CT slice " + std::to_string(i) + " has no label");
        if (!cs.raw.same_shape(pet.slices[i].raw))
            throw DataError("pair_volumes: CT/PET slice " + std::to_string(i) + " differ in shape");
        SlicePair p;
        p.ct = resize_slice(normalize_hu(cs.raw, cfg), cfg.target_size);
        p.pet = resize_slice(pet_norm[i], cfg.target_size);
        clamp(p.ct);
        clamp(p.pet);
        p.label = *cs.label;
        if (cs.tumor_bbox)
            p.tumor_bbox = cs.tumor_bbox->scaled(static_cast<double>(cfg.target_size) / cs.raw.rows(),
                                                 static_cast<double>(cfg.target_size) / cs.raw.cols());
        char id[96];
        std::snprintf(id, sizeof id, "%s_%04zu", ct.volume_id.c_str(), i);
        p.slice_id = id;
        p.modality_meta = {{"source", "external"}, {"ct_volume", ct.volume_id}, {"pet_volume", pet.volume_id},
                           {"slice_index", std::to_string(i)}};
        validate(p);
        out.push_back(std::move(p));
    }
    return out;
}

} // namespace demf
