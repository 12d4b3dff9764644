#include "redforge/shapes.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace redforge::shapes {

using json = nlohmann::json;

std::string category_name(Category c) {
    switch (c) {
        case Category::Chair: return "chair";
        case Category::Table: return "table";
        case Category::Cabinet: return "cabinet";
    }
    return "?";
}

Category category_from_name(const std::string& name) {
    if (name == "chair") return Category::Chair;
    if (name == "table") return Category::Table;
    if (name == "cabinet") return Category::Cabinet;
    throw std::runtime_error("unknown category: " + name);
}

void PartSegmentedShape::validate() const {
    if (parts.empty()) throw std::runtime_error("shape has no parts");
    if (part_labels.size() != cloud.size()) throw std::runtime_error("label count != point count");
    if (!cloud.all_finite()) throw std::runtime_error("non-finite point coordinates");
    std::vector<int> counts(parts.size(), 0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto l = part_labels[i];
        if (l >= parts.size()) throw std::runtime_error("point label out of range");
        if (!parts[l].contains(cloud[i])) throw std::runtime_error("point escapes its part box");
        ++counts[l];
    }
    for (std::size_t p = 0; p < parts.size(); ++p) {
        if (counts[p] == 0) throw std::runtime_error("empty part");
        if (parts[p].w0 <= 0 || parts[p].h0 <= 0 || parts[p].l0 <= 0)
            throw std::runtime_error("non-positive part extent");
        if (parts[p].part_id != static_cast<int>(p)) throw std::runtime_error("part ids must be 0..N-1 in order");
    }
    for (const auto& [a, b] : connectivity) {
        if (a < 0 || b < 0 || a >= part_count() || b >= part_count() || a == b)
            throw std::runtime_error("bad connectivity edge");
    }
}

namespace {

double box_area(const PartBox& b) {
    return 2.0 * (b.h0 * b.l0 + b.w0 * b.l0 + b.w0 * b.h0);
}

Vec3 sample_box_surface(const PartBox& b, Rng& rng) {
    const double ax = b.h0 * b.l0, ay = b.w0 * b.l0, az = b.w0 * b.h0;
    const double total = 2.0 * (ax + ay + az);
    double r = rng.uniform() * total;
    const double u = rng.uniform() - 0.5, v = rng.uniform() - 0.5;
    Vec3 p = b.c0;
    if (r < 2.0 * ax) {
        p.x += (r < ax ? -0.5 : 0.5) * b.w0;
        p.y += u * b.h0;
        p.z += v * b.l0;
    } else if ((r -= 2.0 * ax) < 2.0 * ay) {
        p.y += (r < ay ? -0.5 : 0.5) * b.h0;
        p.x += u * b.w0;
        p.z += v * b.l0;
    } else {
        r -= 2.0 * ay;
        p.z += (r < az ? -0.5 : 0.5) * b.l0;
        p.x += u * b.w0;
        p.y += v * b.h0;
    }
    return p;
}

struct Layout {
    std::vector<PartBox> boxes;
    std::vector<int> mirror_part;  // partner id under x-negation (self for centered parts)
};

// legs of a seat/top panel: two mirrored pairs, tops flush with the panel underside
void add_legs(Layout& lo, double panel_w, double panel_l, double panel_bottom_y, Rng& rng) {
    const double a = rng.uniform(0.06, 0.12);
    const double inset = rng.uniform(0.01, 0.05);
    const double lx = 0.5 * panel_w - 0.5 * a - inset;
    const double lz = 0.5 * panel_l - 0.5 * a - inset;
    const double cy = 0.5 * panel_bottom_y;
    const int base = static_cast<int>(lo.boxes.size());
    for (int k = 0; k < 4; ++k) {
        const double sx = (k % 2 == 0) ? -1.0 : 1.0;
        const double sz = (k < 2) ? 1.0 : -1.0;
        lo.boxes.push_back({{sx * lx, cy, sz * lz}, a, panel_bottom_y, a, base + k});
    }
    lo.mirror_part.insert(lo.mirror_part.end(), {base + 1, base + 0, base + 3, base + 2});
}

Layout chair_layout(Rng& rng) {
    Layout lo;
    const double sw = rng.uniform(0.8, 1.4);
    const double sl = rng.uniform(0.8, 1.3);
    const double sh = rng.uniform(0.08, 0.16);
    const double y_seat = rng.uniform(0.7, 1.1);
    lo.boxes.push_back({{0.0, y_seat - 0.5 * sh, 0.0}, sw, sh, sl, 0});
    lo.mirror_part.push_back(0);

    const double bw = sw * rng.uniform(0.85, 1.0);
    const double bt = rng.uniform(0.08, 0.14);
    const double bh = rng.uniform(0.7, 1.2);
    lo.boxes.push_back({{0.0, y_seat + 0.5 * bh, -0.5 * sl + 0.5 * bt}, bw, bh, bt, 1});
    lo.mirror_part.push_back(1);

    add_legs(lo, sw, sl, y_seat - sh, rng);
    return lo;
}

Layout table_layout(Rng& rng) {
    Layout lo;
    const double tw = rng.uniform(1.2, 2.0);
    const double tl = rng.uniform(0.9, 1.6);
    const double th = rng.uniform(0.07, 0.14);
    const double y_top = rng.uniform(0.9, 1.2);
    lo.boxes.push_back({{0.0, y_top - 0.5 * th, 0.0}, tw, th, tl, 0});
    lo.mirror_part.push_back(0);
    add_legs(lo, tw, tl, y_top - th, rng);
    return lo;
}

Layout cabinet_layout(Rng& rng) {
    Layout lo;
    const double bw = rng.uniform(1.0, 1.6);
    const double bh = rng.uniform(1.2, 2.0);
    const double bl = rng.uniform(0.5, 0.9);
    const double base_h = rng.uniform(0.08, 0.2);
    const double base_w = bw * rng.uniform(0.85, 1.0);
    const double base_l = bl * rng.uniform(0.85, 1.0);
    const double top_h = rng.uniform(0.05, 0.12);
    const double top_w = bw * rng.uniform(1.0, 1.1);
    const double top_l = bl * rng.uniform(1.0, 1.1);
    lo.boxes.push_back({{0.0, base_h + 0.5 * bh, 0.0}, bw, bh, bl, 0});
    lo.boxes.push_back({{0.0, 0.5 * base_h, 0.0}, base_w, base_h, base_l, 1});
    lo.boxes.push_back({{0.0, base_h + bh + 0.5 * top_h, 0.0}, top_w, top_h, top_l, 2});
    lo.mirror_part = {0, 1, 2};
    return lo;
}

bool boxes_touch(const PartBox& a, const PartBox& b) {
    const double tol = 1e-6;
    return std::abs(a.c0.x - b.c0.x) <= 0.5 * (a.w0 + b.w0) + tol &&
           std::abs(a.c0.y - b.c0.y) <= 0.5 * (a.h0 + b.h0) + tol &&
           std::abs(a.c0.z - b.c0.z) <= 0.5 * (a.l0 + b.l0) + tol;
}

}  // namespace

PartSegmentedShape generate_shape(Category category, std::uint64_t seed, std::size_t m) {
    if (m < 2 || m % 2 != 0) throw std::runtime_error("generate_shape: point count must be even and >= 2");
    Rng rng = Rng(seed).stream("shape");

    Layout lo;
    switch (category) {
        case Category::Chair: lo = chair_layout(rng); break;
        case Category::Table: lo = table_layout(rng); break;
        case Category::Cabinet: lo = cabinet_layout(rng); break;
    }

    // center the assembly and scale it into the unit cube
    Vec3 mn{1e30, 1e30, 1e30}, mx{-1e30, -1e30, -1e30};
    for (const auto& b : lo.boxes) {
        mn = {std::min(mn.x, b.c0.x - 0.5 * b.w0), std::min(mn.y, b.c0.y - 0.5 * b.h0),
              std::min(mn.z, b.c0.z - 0.5 * b.l0)};
        mx = {std::max(mx.x, b.c0.x + 0.5 * b.w0), std::max(mx.y, b.c0.y + 0.5 * b.h0),
              std::max(mx.z, b.c0.z + 0.5 * b.l0)};
    }
    const Vec3 center = (mn + mx) * 0.5;
    const double half = std::max({mx.x - center.x, mx.y - center.y, mx.z - center.z});
    const double s = 0.9 / half;
    for (auto& b : lo.boxes) {
        b.c0 = (b.c0 - center) * s;
        b.c0.x = lo.mirror_part[b.part_id] == b.part_id ? 0.0 : b.c0.x;  // keep centered parts exactly on the plane
        b.w0 *= s;
        b.h0 *= s;
        b.l0 *= s;
    }

    // one generator per centered part or mirrored pair; seeds allocated
    // proportionally to the surface area the generator covers
    struct Generator {
        int box;
        double covered;
    };
    std::vector<Generator> gens;
    for (const auto& b : lo.boxes) {
        const int partner = lo.mirror_part[b.part_id];
        if (partner == b.part_id)
            gens.push_back({b.part_id, box_area(b)});
        else if (b.part_id < partner)
            gens.push_back({b.part_id, 2.0 * box_area(b)});
    }
    const double total_area = std::accumulate(gens.begin(), gens.end(), 0.0,
                                              [](double acc, const Generator& g) { return acc + g.covered; });
    const std::size_t half_m = m / 2;
    std::vector<std::size_t> alloc(gens.size());
    std::vector<double> frac(gens.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < gens.size(); ++i) {
        const double want = static_cast<double>(half_m) * gens[i].covered / total_area;
        alloc[i] = std::max<std::size_t>(1, static_cast<std::size_t>(want));
        frac[i] = want - std::floor(want);
        assigned += alloc[i];
    }
    while (assigned < half_m) {
        const std::size_t i = static_cast<std::size_t>(
            std::max_element(frac.begin(), frac.end()) - frac.begin());
        ++alloc[i];
        frac[i] = -1.0;
        ++assigned;
    }
    while (assigned > half_m) {
        const std::size_t i = static_cast<std::size_t>(std::max_element(alloc.begin(), alloc.end()) - alloc.begin());
        --alloc[i];
        --assigned;
    }

    PartSegmentedShape shape;
    shape.category = category;
    shape.parts = lo.boxes;
    shape.cloud.points.reserve(m);
    shape.part_labels.reserve(m);
    for (std::size_t g = 0; g < gens.size(); ++g) {
        const PartBox& b = lo.boxes[static_cast<std::size_t>(gens[g].box)];
        const int mirror_label = lo.mirror_part[b.part_id];
        for (std::size_t k = 0; k < alloc[g]; ++k) {
            Vec3 p = sample_box_surface(b, rng);
            p = {geometry::snap_to_f32(p.x), geometry::snap_to_f32(p.y), geometry::snap_to_f32(p.z)};
            shape.cloud.points.push_back(p);
            shape.part_labels.push_back(static_cast<std::uint16_t>(b.part_id));
            shape.cloud.points.push_back({-p.x, p.y, p.z});
            shape.part_labels.push_back(static_cast<std::uint16_t>(mirror_label));
        }
    }

    for (int i = 0; i < shape.part_count(); ++i)
        for (int j = i + 1; j < shape.part_count(); ++j)
            if (boxes_touch(shape.parts[static_cast<std::size_t>(i)], shape.parts[static_cast<std::size_t>(j)]))
                shape.connectivity.emplace_back(i, j);

    shape.validate();
    return shape;
}

autodiff::TensorPtr part_mean_pool(const autodiff::TensorPtr& pointwise, const std::vector<std::uint16_t>& labels,
                                   int n_parts) {
    return autodiff::segment_mean(pointwise, labels, n_parts);
}

int SourceDatabase::find(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id) return static_cast<int>(i);
    return -1;
}

SourceDatabase build_database(int n_per_category, std::uint64_t seed, std::size_t m) {
    if (n_per_category < 1) throw std::runtime_error("build_database: n_per_category must be >= 1");
    if (n_per_category > 9999) throw std::runtime_error("build_database: too many shapes per category");
    SourceDatabase db;
    std::vector<std::pair<std::string, PartSegmentedShape>> entries;
    const Category cats[] = {Category::Chair, Category::Table, Category::Cabinet};
    for (int c = 0; c < kCategoryCount; ++c) {
        for (int k = 0; k < n_per_category; ++k) {
            char idbuf[32];
            std::snprintf(idbuf, sizeof(idbuf), "%s_%04d", category_name(cats[c]).c_str(), k);
            entries.emplace_back(idbuf,
                                 generate_shape(cats[c], derive_seed(seed, "db-shape", static_cast<std::uint64_t>(c) * 100000 + k), m));
        }
    }
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [id, shape] : entries) {
        db.ids.push_back(id);
        db.shapes.push_back(std::move(shape));
    }
    return db;
}

// ---------------------------------------------------------------------------
// SDB1

void save_database(const SourceDatabase& db, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "clouds");
    json manifest;
    manifest["format"] = "SDB1";
    json shapes_j = json::array();
    for (std::size_t i = 0; i < db.size(); ++i) {
        const auto& shape = db.shapes[i];
        shape.validate();
        const std::string cloud_rel = "clouds/" + db.ids[i] + ".pcf";
        const std::string labels_rel = "clouds/" + db.ids[i] + ".labels";
        geometry::save_pcf(shape.cloud, dir / cloud_rel);
        {
            std::ofstream lf(dir / labels_rel, std::ios::binary);
            lf.write(reinterpret_cast<const char*>(shape.part_labels.data()),
                     static_cast<std::streamsize>(shape.part_labels.size() * sizeof(std::uint16_t)));
            if (!lf) throw std::runtime_error("short label write: " + labels_rel);
        }
        json parts_j = json::array();
        for (const auto& p : shape.parts) {
            parts_j.push_back({{"part_id", p.part_id},
                               {"c0", {p.c0.x, p.c0.y, p.c0.z}},
                               {"w0", p.w0},
                               {"h0", p.h0},
                               {"l0", p.l0}});
        }
        json conn_j = json::array();
        for (const auto& [a, b] : shape.connectivity) conn_j.push_back({a, b});
        shapes_j.push_back({{"id", db.ids[i]},
                            {"category", category_name(shape.category)},
                            {"points", shape.cloud.size()},
                            {"parts", parts_j},
                            {"connectivity", conn_j},
                            {"cloud", cloud_rel},
                            {"labels", labels_rel}});
    }
    manifest["shapes"] = shapes_j;
    manifest["checks"] = {{"shape_invariants", "pass"}, {"count", db.size()}};
    std::ofstream mf(dir / "manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw std::runtime_error("cannot write manifest: " + (dir / "manifest.json").string());
}

SourceDatabase load_database(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw std::runtime_error("cannot open manifest: " + manifest_path.string());
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("SDB1 manifest parse error at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    if (manifest.value("format", "") != "SDB1")
        throw std::runtime_error("SDB1 manifest parse error: missing or wrong format tag");

    SourceDatabase db;
    for (const auto& sj : manifest.at("shapes")) {
        PartSegmentedShape shape;
        const std::string id = sj.at("id").get<std::string>();
        shape.category = category_from_name(sj.at("category").get<std::string>());
        shape.cloud = geometry::load_pcf(dir / sj.at("cloud").get<std::string>());
        const std::size_t n_points = sj.at("points").get<std::size_t>();
        if (shape.cloud.size() != n_points)
            throw std::runtime_error("SDB1 parse error in shape '" + id + "': cloud section has " +
                                     std::to_string(shape.cloud.size()) + " points, manifest says " +
                                     std::to_string(n_points));
        const fs::path label_path = dir / sj.at("labels").get<std::string>();
        std::ifstream lf(label_path, std::ios::binary);
        if (!lf) throw std::runtime_error("cannot open labels: " + label_path.string());
        shape.part_labels.resize(n_points);
        if (!lf.read(reinterpret_cast<char*>(shape.part_labels.data()),
                     static_cast<std::streamsize>(n_points * sizeof(std::uint16_t))))
            throw std::runtime_error("SDB1 parse error in shape '" + id + "': labels section truncated at byte " +
                                     std::to_string(lf.gcount()));
        for (const auto& pj : sj.at("parts")) {
            PartBox p;
            p.part_id = pj.at("part_id").get<int>();
            const auto& c = pj.at("c0");
            p.c0 = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
            p.w0 = pj.at("w0").get<double>();
            p.h0 = pj.at("h0").get<double>();
            p.l0 = pj.at("l0").get<double>();
            shape.parts.push_back(p);
        }
        for (const auto& ej : sj.at("connectivity"))
            shape.connectivity.emplace_back(ej.at(0).get<int>(), ej.at(1).get<int>());
        shape.validate();
        db.ids.push_back(id);
        db.shapes.push_back(std::move(shape));
    }
    // manifest order is id-sorted on save; keep the contract on load too
    std::vector<std::size_t> order(db.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return db.ids[a] < db.ids[b]; });
    SourceDatabase sorted;
    for (std::size_t i : order) {
        sorted.ids.push_back(db.ids[i]);
        sorted.shapes.push_back(std::move(db.shapes[i]));
    }
    return sorted;
}

}  // namespace redforge::shapes
