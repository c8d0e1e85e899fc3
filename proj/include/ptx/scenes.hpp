#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>

#include "json.hpp"
#include "ptx/tensor.hpp"

namespace ptx {

// Synthetic multi-class shape scenes. Class identity maps to shape kind;
// under the "ambiguous" palette every class renders in the same color, so a
// model must read geometry (or be told the class) to separate them. That is
// the scene-side half of the text-conditioning experiment.

enum class ShapeKind { disk, square, triangle, cross, ring };

inline ShapeKind shape_for_class_index(size_t i) { return ShapeKind(i % 5); }

struct SceneSpec {
    size_t image_size = 64;
    std::vector<std::string> classes;
    size_t instances_per_class_min = 1;
    size_t instances_per_class_max = 2;
    size_t radius_min = 6;
    size_t radius_max = 10;
    std::string palette = "ambiguous";  // or "distinct"
    size_t points_per_prompt = 5;
    std::vector<std::string> prompt_modes = {"interior"};
    bool single_class_per_scene = false;

    nlohmann::json to_json() const {
        return {{"image_size", image_size},
                {"classes", classes},
                {"instances_per_class", {instances_per_class_min, instances_per_class_max}},
                {"radius", {radius_min, radius_max}},
                {"palette", palette},
                {"points_per_prompt", points_per_prompt},
                {"prompt_modes", prompt_modes},
                {"single_class_per_scene", single_class_per_scene}};
    }

    static SceneSpec from_json(const nlohmann::json& j) {
        SceneSpec s;
        s.image_size = j.value("image_size", size_t(64));
        s.classes = j.at("classes").get<std::vector<std::string>>();
        if (j.count("instances_per_class")) {
            s.instances_per_class_min = j["instances_per_class"].at(0).get<size_t>();
            s.instances_per_class_max = j["instances_per_class"].at(1).get<size_t>();
        }
        if (j.count("radius")) {
            s.radius_min = j["radius"].at(0).get<size_t>();
            s.radius_max = j["radius"].at(1).get<size_t>();
        }
        s.palette = j.value("palette", std::string("ambiguous"));
        s.points_per_prompt = j.value("points_per_prompt", size_t(5));
        if (j.count("prompt_modes")) s.prompt_modes = j["prompt_modes"].get<std::vector<std::string>>();
        s.single_class_per_scene = j.value("single_class_per_scene", false);
        s.validate();
        return s;
    }

    void validate() const {
        if (classes.size() < 2) throw ConfigError("scene spec needs at least 2 classes");
        if (palette != "ambiguous" && palette != "distinct")
            throw ConfigError("palette must be 'ambiguous' or 'distinct', got '" + palette + "'");
        if (instances_per_class_min > instances_per_class_max || instances_per_class_max == 0)
            throw ConfigError("bad instances_per_class range");
        if (radius_min < 4 || radius_min > radius_max)
            throw ConfigError("bad radius range (min 4)");
        if (image_size < 4 * radius_max)
            throw ConfigError("image too small for the configured shape sizes");
        if (points_per_prompt < 1) throw ConfigError("points_per_prompt must be >= 1");
        for (auto& m : prompt_modes)
            if (m != "interior" && m != "edge" && m != "mixed" && m != "partial_instances")
                throw ConfigError("unknown prompt mode '" + m + "'");
        std::set<std::string> seen(classes.begin(), classes.end());
        if (seen.size() != classes.size()) throw ConfigError("duplicate class names in scene spec");
    }
};

struct Instance {
    std::string class_name;
    Tensor<float> mask;  // [s,s], values 0/1
};

struct PromptSample {
    std::string class_name;
    std::string prompt_mode;
    std::vector<std::array<int, 2>> points;  // [x, y]
};

struct Scene {
    uint64_t seed = 0;
    Tensor<float> image;  // [s,s,3] in [0,1]
    std::vector<Instance> instances;
    std::vector<PromptSample> samples;
};

namespace shapes {

inline Tensor<float> rasterize(ShapeKind kind, size_t s, long cx, long cy, long R) {
    Tensor<float> m({s, s});
    auto put = [&](long x, long y) {
        if (x >= 0 && y >= 0 && x < long(s) && y < long(s)) m.data[size_t(y) * s + size_t(x)] = 1.0f;
    };
    switch (kind) {
        case ShapeKind::disk:
            for (long y = cy - R; y <= cy + R; ++y)
                for (long x = cx - R; x <= cx + R; ++x)
                    if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= R * R) put(x, y);
            break;
        case ShapeKind::square:
            for (long y = cy - R; y <= cy + R; ++y)
                for (long x = cx - R; x <= cx + R; ++x) put(x, y);
            break;
        case ShapeKind::triangle:
            // apex up: rows widen linearly from the apex to the base
            for (long y = cy - R; y <= cy + R; ++y) {
                long half = ((y - (cy - R)) * R) / (2 * R);
                for (long x = cx - half; x <= cx + half; ++x) put(x, y);
            }
            break;
        case ShapeKind::cross: {
            long w = std::max(3l, R / 2);
            for (long y = cy - R; y <= cy + R; ++y)
                for (long x = cx - R; x <= cx + R; ++x)
                    if (std::abs(x - cx) <= w || std::abs(y - cy) <= w) put(x, y);
            break;
        }
        case ShapeKind::ring: {
            long rin = std::max(1l, R / 3);
            for (long y = cy - R; y <= cy + R; ++y)
                for (long x = cx - R; x <= cx + R; ++x) {
                    long d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    if (d2 <= R * R && d2 > rin * rin) put(x, y);
                }
            break;
        }
    }
    return m;
}

inline std::array<float, 3> class_color(size_t class_index, const std::string& palette) {
    if (palette == "ambiguous") return {0.82f, 0.82f, 0.82f};
    static const std::array<float, 3> table[5] = {{0.90f, 0.25f, 0.20f},
                                                  {0.20f, 0.85f, 0.30f},
                                                  {0.25f, 0.35f, 0.95f},
                                                  {0.92f, 0.88f, 0.25f},
                                                  {0.75f, 0.25f, 0.90f}};
    return table[class_index % 5];
}

inline constexpr float kBackground = 0.12f;

}  // namespace shapes

// True where every pixel within chebyshev distance 2 is still inside the
// mask: the "clean interior" band for well-placed prompts.
inline bool is_interior_point(const Tensor<float>& mask, long x, long y) {
    long s = long(mask.shape[0]);
    if (x < 0 || y < 0 || x >= s || y >= s || mask.data[size_t(y) * s + size_t(x)] == 0.0f) return false;
    for (long dy = -2; dy <= 2; ++dy)
        for (long dx = -2; dx <= 2; ++dx) {
            long nx = x + dx, ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= s || ny >= s) return false;
            if (mask.data[size_t(ny) * s + size_t(nx)] == 0.0f) return false;
        }
    return true;
}

// True for mask pixels with at least one 8-neighbor outside the mask.
inline bool is_edge_point(const Tensor<float>& mask, long x, long y) {
    long s = long(mask.shape[0]);
    if (x < 0 || y < 0 || x >= s || y >= s || mask.data[size_t(y) * s + size_t(x)] == 0.0f) return false;
    for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
            long nx = x + dx, ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= s || ny >= s) return true;
            if (mask.data[size_t(ny) * s + size_t(nx)] == 0.0f) return true;
        }
    return false;
}

inline std::vector<std::array<int, 2>> interior_candidates(const Tensor<float>& mask) {
    std::vector<std::array<int, 2>> out;
    long s = long(mask.shape[0]);
    for (long y = 0; y < s; ++y)
        for (long x = 0; x < s; ++x)
            if (is_interior_point(mask, x, y)) out.push_back({int(x), int(y)});
    return out;
}

inline std::vector<std::array<int, 2>> edge_candidates(const Tensor<float>& mask) {
    std::vector<std::array<int, 2>> out;
    long s = long(mask.shape[0]);
    for (long y = 0; y < s; ++y)
        for (long x = 0; x < s; ++x)
            if (is_edge_point(mask, x, y)) out.push_back({int(x), int(y)});
    return out;
}

inline Tensor<float> union_mask(const std::vector<const Tensor<float>*>& masks, size_t s) {
    Tensor<float> u({s, s});
    for (auto* m : masks)
        for (size_t i = 0; i < u.numel(); ++i)
            if (m->data[i] != 0.0f) u.data[i] = 1.0f;
    return u;
}

inline Tensor<float> class_union(const Scene& scene, const std::string& class_name) {
    std::vector<const Tensor<float>*> ms;
    for (auto& inst : scene.instances)
        if (inst.class_name == class_name) ms.push_back(&inst.mask);
    return union_mask(ms, scene.image.shape[0]);
}

namespace detail {

inline std::vector<std::array<int, 2>> draw_points(std::vector<std::array<int, 2>> candidates,
                                                   size_t k, Rng& rng, const std::string& mode) {
    if (candidates.size() < k)
        throw ConfigError("prompt mode '" + mode + "' has only " + std::to_string(candidates.size()) +
                          " eligible pixels for " + std::to_string(k) + " points");
    rng.shuffle(candidates);
    candidates.resize(k);
    return candidates;
}

}  // namespace detail

// Draws K prompt points for one class of a scene. Mode semantics:
//   interior          clean hits >= 2 px from the mask boundary
//   edge              on the boundary band (<= 1 px from outside)
//   mixed             ceil(K/2) interior + floor(K/2) edge
//   partial_instances interior points confined to a strict subset of the
//                     instances, leaving at least one instance unprompted
inline std::vector<std::array<int, 2>> sample_prompts(const Scene& scene, const std::string& class_name,
                                                      size_t k, const std::string& mode, uint64_t seed) {
    if (k < 1) throw ConfigError("need at least one prompt point");
    Rng rng(mix_seed(seed, fnv1a64(mode) ^ fnv1a64(class_name)));
    std::vector<const Tensor<float>*> class_masks;
    for (auto& inst : scene.instances)
        if (inst.class_name == class_name) class_masks.push_back(&inst.mask);
    if (class_masks.empty()) throw ConfigError("scene has no instances of class '" + class_name + "'");
    const size_t s = scene.image.shape[0];

    if (mode == "interior") {
        return detail::draw_points(interior_candidates(union_mask(class_masks, s)), k, rng, mode);
    }
    if (mode == "edge") {
        return detail::draw_points(edge_candidates(union_mask(class_masks, s)), k, rng, mode);
    }
    if (mode == "mixed") {
        auto u = union_mask(class_masks, s);
        size_t ki = (k + 1) / 2;
        auto pts = detail::draw_points(interior_candidates(u), ki, rng, mode);
        if (k > ki) {
            auto epts = detail::draw_points(edge_candidates(u), k - ki, rng, mode);
            pts.insert(pts.end(), epts.begin(), epts.end());
        }
        return pts;
    }
    if (mode == "partial_instances") {
        if (class_masks.size() < 2)
            throw ConfigError("partial_instances needs >= 2 instances of class '" + class_name + "'");
        // strict non-empty subset: drop at least one instance
        size_t keep = 1 + rng.index(class_masks.size() - 1);
        std::vector<size_t> order(class_masks.size());
        std::iota(order.begin(), order.end(), size_t(0));
        rng.shuffle(order);
        std::vector<const Tensor<float>*> subset;
        for (size_t i = 0; i < keep; ++i) subset.push_back(class_masks[order[i]]);
        return detail::draw_points(interior_candidates(union_mask(subset, s)), k, rng, mode);
    }
    throw ConfigError("unknown prompt mode '" + mode + "'");
}

inline Scene generate_scene(const SceneSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(mix_seed(seed, 0x7363656e));
    const size_t s = spec.image_size;

    // decide instance counts per class
    std::vector<size_t> counts(spec.classes.size(), 0);
    if (spec.single_class_per_scene) {
        size_t chosen = rng.index(spec.classes.size());
        counts[chosen] = std::max<size_t>(1, spec.instances_per_class_min +
                                                 rng.index(spec.instances_per_class_max -
                                                           spec.instances_per_class_min + 1));
    } else {
        for (auto& c : counts)
            c = spec.instances_per_class_min +
                rng.index(spec.instances_per_class_max - spec.instances_per_class_min + 1);
    }

    Scene scene;
    scene.seed = seed;
    Tensor<float> occupancy({s, s});

    auto blocked = [&](const Tensor<float>& m) {
        // disjointness with a 1-px moat so masks never touch
        long n = long(s);
        for (long y = 0; y < n; ++y)
            for (long x = 0; x < n; ++x) {
                if (m.data[size_t(y) * s + size_t(x)] == 0.0f) continue;
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) {
                        long nx = x + dx, ny = y + dy;
                        if (nx >= 0 && ny >= 0 && nx < n && ny < n &&
                            occupancy.data[size_t(ny) * s + size_t(nx)] != 0.0f)
                            return true;
                    }
            }
        return false;
    };

    for (size_t ci = 0; ci < spec.classes.size(); ++ci) {
        for (size_t k = 0; k < counts[ci]; ++k) {
            bool placed = false;
            for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
                long R = long(spec.radius_min + rng.index(spec.radius_max - spec.radius_min + 1));
                long lo = R + 1, hi = long(s) - R - 2;
                if (hi < lo) continue;
                long cx = lo + long(rng.index(size_t(hi - lo + 1)));
                long cy = lo + long(rng.index(size_t(hi - lo + 1)));
                auto m = shapes::rasterize(shape_for_class_index(ci), s, cx, cy, R);
                double area = 0;
                for (float v : m.data) area += v;
                if (area < 4) continue;
                // interior prompts must never starve on this instance
                if (interior_candidates(m).size() < spec.points_per_prompt) continue;
                if (blocked(m)) continue;
                for (size_t i = 0; i < occupancy.numel(); ++i)
                    if (m.data[i] != 0.0f) occupancy.data[i] = 1.0f;
                scene.instances.push_back({spec.classes[ci], std::move(m)});
                placed = true;
            }
            if (!placed)
                throw ConfigError("could not place instance " + std::to_string(k + 1) + " of class '" +
                                  spec.classes[ci] + "' after 1000 attempts; use fewer or smaller instances");
        }
    }

    // render: flat background, one flat color per class
    scene.image = Tensor<float>({s, s, 3});
    for (size_t i = 0; i < s * s; ++i)
        for (size_t c = 0; c < 3; ++c) scene.image.data[i * 3 + c] = shapes::kBackground;
    for (auto& inst : scene.instances) {
        size_t ci = std::find(spec.classes.begin(), spec.classes.end(), inst.class_name) -
                    spec.classes.begin();
        auto color = shapes::class_color(ci, spec.palette);
        for (size_t i = 0; i < s * s; ++i)
            if (inst.mask.data[i] != 0.0f)
                for (size_t c = 0; c < 3; ++c) scene.image.data[i * 3 + c] = color[c];
    }

    // one sample per present class per requested mode; partial_instances only
    // where the class actually has an instance to withhold
    for (size_t ci = 0; ci < spec.classes.size(); ++ci) {
        if (counts[ci] == 0) continue;
        for (auto& mode : spec.prompt_modes) {
            if (mode == "partial_instances" && counts[ci] < 2) continue;
            auto pts = sample_prompts(scene, spec.classes[ci], spec.points_per_prompt, mode, seed);
            scene.samples.push_back({spec.classes[ci], mode, std::move(pts)});
        }
    }
    return scene;
}

// ---------------------------------------------------------------------------
// Dataset directory: scenes.jsonl + one PTX1 image per scene + one PTX1 mask
// per instance. Line schema is fixed; the generating spec is kept alongside
// in spec.json for provenance.
// ---------------------------------------------------------------------------

struct Dataset {
    SceneSpec spec;
    std::vector<Scene> scenes;
};

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream jl(dir / "scenes.jsonl");
    if (!jl) throw IoError("cannot write " + (dir / "scenes.jsonl").string());
    char buf[64];
    for (size_t si = 0; si < ds.scenes.size(); ++si) {
        const Scene& sc = ds.scenes[si];
        std::snprintf(buf, sizeof(buf), "img_%04zu.ptx", si);
        std::string image_file = buf;
        write_ptx_file(dir / image_file, sc.image);
        nlohmann::json rec;
        rec["seed"] = sc.seed;
        rec["image_file"] = image_file;
        rec["instances"] = nlohmann::json::array();
        for (size_t ii = 0; ii < sc.instances.size(); ++ii) {
            std::snprintf(buf, sizeof(buf), "msk_%04zu_%02zu.ptx", si, ii);
            std::string mask_file = buf;
            write_ptx_file(dir / mask_file, sc.instances[ii].mask);
            rec["instances"].push_back({{"class", sc.instances[ii].class_name}, {"mask_file", mask_file}});
        }
        rec["samples"] = nlohmann::json::array();
        for (auto& sm : sc.samples) {
            nlohmann::json pts = nlohmann::json::array();
            for (auto& p : sm.points) pts.push_back({p[0], p[1]});
            rec["samples"].push_back(
                {{"class", sm.class_name}, {"prompt_mode", sm.prompt_mode}, {"points", pts}});
        }
        jl << rec.dump() << "\n";
    }
    jl.close();
    std::ofstream spec_out(dir / "spec.json");
    spec_out << ds.spec.to_json().dump(2) << "\n";
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    {
        std::ifstream spec_in(dir / "spec.json");
        if (spec_in) {
            nlohmann::json j;
            spec_in >> j;
            ds.spec = SceneSpec::from_json(j);
        }
    }
    std::ifstream jl(dir / "scenes.jsonl");
    if (!jl) throw IoError("cannot open " + (dir / "scenes.jsonl").string());
    std::string line;
    size_t lineno = 0;
    while (std::getline(jl, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
            Scene sc;
            sc.seed = rec.at("seed").get<uint64_t>();
            sc.image = read_ptx_file(dir / rec.at("image_file").get<std::string>());
            for (auto& inst : rec.at("instances")) {
                Instance in;
                in.class_name = inst.at("class").get<std::string>();
                in.mask = read_ptx_file(dir / inst.at("mask_file").get<std::string>());
                sc.instances.push_back(std::move(in));
            }
            for (auto& sm : rec.at("samples")) {
                PromptSample ps;
                ps.class_name = sm.at("class").get<std::string>();
                ps.prompt_mode = sm.at("prompt_mode").get<std::string>();
                for (auto& p : sm.at("points")) ps.points.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
                sc.samples.push_back(std::move(ps));
            }
            ds.scenes.push_back(std::move(sc));
        } catch (const nlohmann::json::exception& e) {
            throw IoError("scenes.jsonl line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return ds;
}

inline Dataset generate_dataset(const SceneSpec& spec, uint64_t seed, size_t count) {
    Dataset ds;
    ds.spec = spec;
    ds.scenes.reserve(count);
    for (size_t i = 0; i < count; ++i) ds.scenes.push_back(generate_scene(spec, mix_seed(seed, i)));
    return ds;
}

}  // namespace ptx
