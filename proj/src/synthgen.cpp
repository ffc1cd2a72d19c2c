// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "uniparser/error.hpp"

namespace uniparser {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

using Rgb = std::array<double, 3>;

// Fixed per-part tone mixed into every instance colour so parts look alike
// across instances.
constexpr std::array<Rgb, 8> kPartTone{{
    {0.95, 0.90, 0.80},  // head
    {0.15, 0.20, 0.85},  // torso
    {0.90, 0.25, 0.20},  // arms
    {0.20, 0.80, 0.25},  // legs
    {0.95, 0.85, 0.10},  // feet
    {0.60, 0.10, 0.70},  // hat
    {0.10, 0.70, 0.80},  // belt
    {0.80, 0.50, 0.20},  // hands
}};

Rgb hue_to_rgb(double hue) {
    const double h6 = hue * 6.0;
    const double x = 1.0 - std::abs(std::fmod(h6, 2.0) - 1.0);
    switch (static_cast<int>(h6) % 6) {
        case 0: return {1, x, 0};
        case 1: return {x, 1, 0};
        case 2: return {0, 1, x};
        case 3: return {0, x, 1};
        case 4: return {x, 0, 1};
        default: return {1, 0, x};
    }
}

// Part index (1-based, up to 8) painted at local coordinates (v, u) in units
// of a tenth of the figure height; 0 when outside the figure. Later parts in
// the list overwrite earlier ones.
int humanoid_part(double v, double u, int parts) {
    int part = 0;
    auto paint = [&](int id, bool inside) {
        if (id <= parts && inside) part = id;
    };
    const double hv = v - 1.3, hu = u - 3.0;
    paint(1, hv * hv + hu * hu <= 1.3 * 1.3);
    paint(2, v >= 2.6 && v < 6.2 && u >= 1.5 && u < 4.5);
    paint(3, v >= 2.8 && v < 6.0 && ((u >= 0.0 && u < 1.5) || (u >= 4.5 && u < 6.0)));
    paint(4, v >= 6.2 && v < 10.0 && ((u >= 1.5 && u < 2.9) || (u >= 3.1 && u < 4.5)));
    paint(5, v >= 9.3 && v < 10.0 && ((u >= 1.3 && u < 2.9) || (u >= 3.1 && u < 4.7)));
    paint(6, v >= 0.0 && v < 0.5 && u >= 1.9 && u < 4.1);
    paint(7, v >= 5.6 && v < 6.2 && u >= 1.5 && u < 4.5);
    paint(8, v >= 5.4 && v < 6.0 && ((u >= 0.0 && u < 1.5) || (u >= 4.5 && u < 6.0)));
    return part;
}

constexpr double kFigureAspect = 0.6;  // width / height

Grid<std::int8_t> rasterize(int fig_h, int top, int left, int img_h, int img_w, int parts) {
    Grid<std::int8_t> out(img_h, img_w, 0);
    const double unit = fig_h / 10.0;
    const int fig_w = static_cast<int>(std::ceil(fig_h * kFigureAspect));
    for (int y = top; y < std::min(img_h, top + fig_h); ++y) {
        for (int x = left; x < std::min(img_w, left + fig_w); ++x) {
            const double v = (y - top + 0.5) / unit;
            const double u = (x - left + 0.5) / unit;
            out(y, x) = static_cast<std::int8_t>(humanoid_part(v, u, parts));
        }
    }
    return out;
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

void validate(const SynthSpec& spec) {
    if (spec.n_categories < 1) throw Error(ErrorCode::BadConfig, "n_categories must be >= 1");
    if (spec.min_instances < 0 || spec.min_instances > spec.max_instances) {
        throw Error(ErrorCode::BadConfig, "instance range must satisfy 0 <= min <= max");
    }
    if (spec.height < 16 || spec.width < 16) throw Error(ErrorCode::BadConfig, "image size must be at least 16x16");
    if (spec.max_instances > 65535) throw Error(ErrorCode::BadConfig, "too many instances for 16-bit labels");
}

ParsingSample generate_sample(const SynthSpec& spec, int index) {
    validate(spec);
    std::mt19937_64 rng(splitmix64(spec.seed ^ splitmix64(static_cast<std::uint64_t>(index))));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

    const int h = spec.height, w = spec.width;
    const int parts = std::min(8, std::max(4, spec.n_categories));
    const int wanted = uniform_int(spec.min_instances, spec.max_instances);

    // Approximate part areas in units of (h/10)^2; the figure is scaled so
    // that the smallest part in use covers at least min_instance_px / 4.
    constexpr std::array<double, 8> kPartArea{5.3, 9.0, 9.6, 10.6, 2.2, 1.1, 1.8, 1.8};
    const double smallest = *std::min_element(kPartArea.begin(), kPartArea.begin() + parts);
    const double min_fig_for_parts = 10.0 * std::sqrt(std::max(0, spec.min_instance_px) / 4.0 / smallest);
    const int fig_lo = std::max(static_cast<int>(std::ceil(std::max(0.35 * h, min_fig_for_parts))), 10);
    const int fig_hi = std::max(fig_lo, static_cast<int>(0.5 * h));

    LabelMap instance_map(h, w, 0);
    LabelMap part_map(h, w, 0);
    std::vector<Rgb> colors;
    int placement_failures = 0;
    const double hue0 = unit(rng);
    for (int k = 0; k < wanted; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            const int fig_h = uniform_int(fig_lo, fig_hi);
            const int fig_w = static_cast<int>(std::ceil(fig_h * kFigureAspect));
            if (fig_h > h || fig_w > w) break;
            const int top = uniform_int(0, h - fig_h);
            const int left = uniform_int(0, w - fig_w);
            auto raster = rasterize(fig_h, top, left, h, w, parts);
            if (!spec.overlap_allowed) {
                bool clash = false;
                for (int y = 0; y < h && !clash; ++y) {
                    for (int x = 0; x < w && !clash; ++x) {
                        if (!raster(y, x)) continue;
                        for (int dy = -1; dy <= 1 && !clash; ++dy) {
                            for (int dx = -1; dx <= 1 && !clash; ++dx) {
                                const int yy = y + dy, xx = x + dx;
                                if (yy >= 0 && yy < h && xx >= 0 && xx < w && instance_map(yy, xx)) clash = true;
                            }
                        }
                    }
                }
                if (clash) continue;
            }
            const int id = static_cast<int>(colors.size()) + 1;
            for (std::size_t i = 0; i < raster.data.size(); ++i) {
                if (!raster.data[i]) continue;
                instance_map.data[i] = id;
                part_map.data[i] = raster.data[i];
            }
            colors.push_back(hue_to_rgb(std::fmod(hue0 + 0.618033988749895 * k, 1.0)));
            placed = true;
        }
        if (!placed) ++placement_failures;
    }

    // Drop occluded-away instances and relabel to contiguous ids.
    std::vector<std::size_t> visible(colors.size() + 1, 0);
    for (auto id : instance_map.data) ++visible[static_cast<std::size_t>(id)];
    std::vector<int> remap(colors.size() + 1, 0);
    std::vector<Rgb> kept_colors;
    int dropped = 0;
    for (std::size_t id = 1; id < visible.size(); ++id) {
        if (visible[id] >= static_cast<std::size_t>(std::max(1, spec.min_instance_px))) {
            kept_colors.push_back(colors[id - 1]);
            remap[id] = static_cast<int>(kept_colors.size());
        } else {
            ++dropped;
        }
    }

    ParsingSample s;
    s.sample_id = "sample_" + std::to_string(index);
    s.instance_map = LabelMap(h, w, 0);
    s.category_map = LabelMap(h, w, 0);
    s.image = Tensor({3, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int id = remap[static_cast<std::size_t>(instance_map(y, x))];
            Rgb rgb{0.12, 0.12, 0.12};
            if (id > 0) {
                const int part = part_map(y, x);
                s.instance_map(y, x) = id;
                s.category_map(y, x) = std::min(part, spec.n_categories);
                const auto& base = kept_colors[static_cast<std::size_t>(id - 1)];
                const auto& tone = kPartTone[static_cast<std::size_t>(part - 1)];
                for (int ch = 0; ch < 3; ++ch) rgb[ch] = 0.55 * base[ch] + 0.45 * tone[ch];
            }
            for (int ch = 0; ch < 3; ++ch) s.image.at(ch, y, x) = quantize(rgb[ch] + (unit(rng) - 0.5) * 0.08);
        }
    }
    s.metadata["placement_failures"] = std::to_string(placement_failures);
    s.metadata["dropped_instances"] = std::to_string(dropped);
    return s;
}

std::vector<ParsingSample> generate_dataset(const SynthSpec& spec, int count, int first_index) {
    std::vector<ParsingSample> out;
    out.reserve(static_cast<std::size_t>(std::max(0, count)));
    for (int i = 0; i < count; ++i) out.push_back(generate_sample(spec, first_index + i));
    return out;
}

RgbImage to_rgb8(const Tensor& image) {
    const int h = image.dim(1), w = image.dim(2);
    RgbImage out{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * 3)};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                out.pixels[(static_cast<std::size_t>(y) * w + x) * 3 + ch] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(image.at(ch, y, x), 0.0, 1.0) * 255.0));
            }
    return out;
}

Tensor from_rgb8(const RgbImage& image) {
    Tensor out({3, image.height, image.width});
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                out.at(ch, y, x) = image.pixels[(static_cast<std::size_t>(y) * image.width + x) * 3 + ch] / 255.0;
            }
    return out;
}

namespace {

Gray16Image to_gray16(const LabelMap& m) {
    Gray16Image g{m.height, m.width, std::vector<std::uint16_t>(m.data.size())};
    for (std::size_t i = 0; i < m.data.size(); ++i) g.pixels[i] = static_cast<std::uint16_t>(m.data[i]);
    return g;
}

LabelMap from_gray16(const Gray16Image& g) {
    LabelMap m(g.height, g.width, 0);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = g.pixels[i];
    return m;
}

constexpr const char* kManifestHeader = "uniparser-dataset 1";

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& what) {
    throw Error(ErrorCode::DatasetCorrupt, path.string() + ": " + what);
}

}  // namespace

DatasetManifest write_dataset(const std::vector<ParsingSample>& samples, const std::filesystem::path& dir,
                              const std::optional<SynthSpec>& spec) {
    namespace fs = std::filesystem;
    std::error_code ec;
    for (const char* sub : {"images", "instance", "category"}) {
        fs::create_directories(dir / sub, ec);
        if (ec) corrupt(dir / sub, "cannot create directory: " + ec.message());
    }
    DatasetManifest manifest;
    manifest.spec = spec;
    std::ostringstream text;
    text << kManifestHeader << "\n";
    if (spec) {
        text << "spec.height " << spec->height << "\n"
             << "spec.width " << spec->width << "\n"
             << "spec.min_instances " << spec->min_instances << "\n"
             << "spec.max_instances " << spec->max_instances << "\n"
             << "spec.n_categories " << spec->n_categories << "\n"
             << "spec.min_instance_px " << spec->min_instance_px << "\n"
             << "spec.overlap_allowed " << (spec->overlap_allowed ? 1 : 0) << "\n"
             << "spec.seed " << spec->seed << "\n";
    }
    text << "samples " << samples.size() << "\n";
    for (const auto& s : samples) {
        if (s.sample_id.empty() || s.sample_id.find_first_of(" \t\n/") != std::string::npos) {
            throw Error(ErrorCode::BadConfig, "sample id '" + s.sample_id + "' is not a valid file stem");
        }
        write_png(dir / "images" / (s.sample_id + ".png"), to_rgb8(s.image));
        write_png(dir / "instance" / (s.sample_id + ".png"), to_gray16(s.instance_map));
        write_png(dir / "category" / (s.sample_id + ".png"), to_gray16(s.category_map));
        text << "sample " << s.sample_id;
        for (const auto& [k, v] : s.metadata) text << " " << k << "=" << v;
        text << "\n";
        manifest.sample_ids.push_back(s.sample_id);
    }
    std::ofstream out(dir / "manifest.txt", std::ios::binary);
    if (!out) corrupt(dir / "manifest.txt", "cannot open for writing");
    out << text.str();
    if (!out) corrupt(dir / "manifest.txt", "write failed");
    return manifest;
}

namespace {

struct ManifestEntries {
    DatasetManifest manifest;
    std::vector<std::map<std::string, std::string>> metadata;
};

ManifestEntries parse_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.txt";
    std::ifstream in(path);
    if (!in) corrupt(path, "missing or unreadable");
    std::string line;
    if (!std::getline(in, line) || line != kManifestHeader) corrupt(path, "bad header");
    ManifestEntries out;
    SynthSpec spec;
    bool has_spec = false;
    long declared = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key.rfind("spec.", 0) == 0) {
            has_spec = true;
            const auto field = key.substr(5);
            std::string value;
            ls >> value;
            try {
                if (field == "height") spec.height = std::stoi(value);
                else if (field == "width") spec.width = std::stoi(value);
                else if (field == "min_instances") spec.min_instances = std::stoi(value);
                else if (field == "max_instances") spec.max_instances = std::stoi(value);
                else if (field == "n_categories") spec.n_categories = std::stoi(value);
                else if (field == "min_instance_px") spec.min_instance_px = std::stoi(value);
                else if (field == "overlap_allowed") spec.overlap_allowed = std::stoi(value) != 0;
                else if (field == "seed") spec.seed = std::stoull(value);
                else corrupt(path, "unknown spec field '" + field + "'");
            } catch (const std::logic_error&) {
                corrupt(path, "bad value for " + key);
            }
        } else if (key == "samples") {
            if (!(ls >> declared) || declared < 0) corrupt(path, "bad sample count");
        } else if (key == "sample") {
            std::string id;
            if (!(ls >> id)) corrupt(path, "sample line without id");
            std::map<std::string, std::string> meta;
            std::string kv;
            while (ls >> kv) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) corrupt(path, "bad metadata entry '" + kv + "'");
                meta[kv.substr(0, eq)] = kv.substr(eq + 1);
            }
            out.manifest.sample_ids.push_back(id);
            out.metadata.push_back(std::move(meta));
        } else {
            corrupt(path, "unknown entry '" + key + "'");
        }
    }
    if (declared != static_cast<long>(out.manifest.sample_ids.size())) corrupt(path, "sample count mismatch");
    if (has_spec) out.manifest.spec = spec;
    return out;
}

}  // namespace

DatasetManifest read_manifest(const std::filesystem::path& dir) { return parse_manifest(dir).manifest; }

std::vector<ParsingSample> read_dataset(const std::filesystem::path& dir) {
    auto entries = parse_manifest(dir);
    std::vector<ParsingSample> out;
    for (std::size_t i = 0; i < entries.manifest.sample_ids.size(); ++i) {
        const auto& id = entries.manifest.sample_ids[i];
        ParsingSample s;
        s.sample_id = id;
        s.metadata = entries.metadata[i];
        const auto img_path = dir / "images" / (id + ".png");
        const auto inst_path = dir / "instance" / (id + ".png");
        const auto cat_path = dir / "category" / (id + ".png");
        s.image = from_rgb8(read_png_rgb(img_path));
        s.instance_map = from_gray16(read_png_gray16(inst_path));
        s.category_map = from_gray16(read_png_gray16(cat_path));
        try {
            validate(s);
        } catch (const Error& e) {
            corrupt(inst_path, e.what());
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace uniparser
