// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#include "echodiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "echodiff/errors.hpp"
#include "echodiff/rng.hpp"

namespace echodiff {

namespace {

constexpr std::uint8_t kGrayLevels[4] = {0, 255, 170, 85};  // background, LV, MYO, LA

std::string sample_id_list(const std::vector<std::string>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size() && i < 8; ++i) out += (i ? ", " : "") + ids[i];
    if (ids.size() > 8) out += ", ...";
    return out;
}

}  // namespace

std::uint8_t mask_gray_level(std::uint8_t class_code) {
    if (class_code > 3) {
        throw DataError("mask: unknown class code " + std::to_string(int(class_code)));
    }
    return kGrayLevels[class_code];
}

std::uint8_t unit_to_byte(float v) {
    const float d = std::clamp((v + 1.0f) * 127.5f, 0.0f, 255.0f);
    return static_cast<std::uint8_t>(std::lround(d));
}

Image encode_mask_gray(const Mask& mask) {
    Image g;
    g.h = mask.h;
    g.w = mask.w;
    g.pix.resize(mask.codes.size());
    for (std::size_t i = 0; i < mask.codes.size(); ++i) {
        g.pix[i] = byte_to_unit(mask_gray_level(mask.codes[i]));
    }
    return g;
}

Mask decode_mask_gray(const Image& guide) {
    Mask m;
    m.h = guide.h;
    m.w = guide.w;
    m.codes.resize(guide.pix.size());
    for (std::size_t i = 0; i < guide.pix.size(); ++i) {
        const float display = (guide.pix[i] + 1.0f) * 127.5f;
        std::uint8_t best = 0;
        float best_d = 1e9f;
        for (std::uint8_t c = 0; c < 4; ++c) {
            const float d = std::fabs(display - static_cast<float>(kGrayLevels[c]));
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        m.codes[i] = best;
    }
    return m;
}

Image resize(const Image& img, int side) {
    if (side < 16) throw UsageError("resize: target side must be at least 16");
    Image out;
    out.h = side;
    out.w = side;
    out.pix.resize(static_cast<std::size_t>(side) * side);
    const float sy = static_cast<float>(img.h) / side;
    const float sx = static_cast<float>(img.w) / side;
    for (int y = 0; y < side; ++y) {
        float fy = (y + 0.5f) * sy - 0.5f;
        fy = std::clamp(fy, 0.0f, static_cast<float>(img.h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.h - 1);
        const float wy = fy - y0;
        for (int x = 0; x < side; ++x) {
            float fx = (x + 0.5f) * sx - 0.5f;
            fx = std::clamp(fx, 0.0f, static_cast<float>(img.w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.w - 1);
            const float wx = fx - x0;
            const float v00 = img.pix[static_cast<std::size_t>(y0) * img.w + x0];
            const float v01 = img.pix[static_cast<std::size_t>(y0) * img.w + x1];
            const float v10 = img.pix[static_cast<std::size_t>(y1) * img.w + x0];
            const float v11 = img.pix[static_cast<std::size_t>(y1) * img.w + x1];
            out.pix[static_cast<std::size_t>(y) * side + x] =
                (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
        }
    }
    return out;
}

Mask resize(const Mask& mask, int side) {
    if (side < 16) throw UsageError("resize: target side must be at least 16");
    Mask out;
    out.h = side;
    out.w = side;
    out.codes.resize(static_cast<std::size_t>(side) * side);
    const float sy = static_cast<float>(mask.h) / side;
    const float sx = static_cast<float>(mask.w) / side;
    for (int y = 0; y < side; ++y) {
        const int iy = std::min(mask.h - 1, static_cast<int>((y + 0.5f) * sy));
        for (int x = 0; x < side; ++x) {
            const int ix = std::min(mask.w - 1, static_cast<int>((x + 0.5f) * sx));
            out.codes[static_cast<std::size_t>(y) * side + x] = mask.codes[static_cast<std::size_t>(iy) * mask.w + ix];
        }
    }
    return out;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw UsageError("split: fraction must be in (0,1), got " + std::to_string(fraction));
    }
    const std::size_t n = ds.samples.size();
    const std::size_t first = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (first == 0 || first == n) {
        throw DataError("split: a partition of size 0 (n = " + std::to_string(n) + ", fraction = " +
                        std::to_string(fraction) + ")");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_index(i + 1));
        std::swap(order[i], order[j]);
    }
    Dataset a, b;
    a.domain_tag = b.domain_tag = ds.domain_tag;
    a.provenance = b.provenance = ds.provenance;
    for (std::size_t i = 0; i < n; ++i) {
        (i < first ? a : b).samples.push_back(ds.samples[order[i]]);
    }
    return {a, b};
}

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

void write_pgm(const std::filesystem::path& path, int w, int h, const std::vector<std::uint8_t>& bytes) {
    if (static_cast<std::size_t>(w) * h != bytes.size()) {
        throw DataError("write_pgm: byte count does not match dimensions for " + path.string());
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_pgm: cannot open " + path.string());
    f << "P5\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write_pgm: short write to " + path.string());
}

namespace {

int pgm_token(std::istream& in) {
    // Skips whitespace and '#' comments, then reads one non-negative integer.
    for (;;) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v = -1;
    in >> v;
    return v;
}

}  // namespace

void read_pgm(const std::filesystem::path& path, int& w, int& h, std::vector<std::uint8_t>& bytes) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_pgm: cannot open " + path.string());
    std::string magic(2, '\0');
    f.read(magic.data(), 2);
    if (magic != "P5") throw DataError("read_pgm: " + path.string() + " is not a binary PGM");
    w = pgm_token(f);
    h = pgm_token(f);
    const int maxval = pgm_token(f);
    if (w <= 0 || h <= 0 || maxval != 255 || !f) {
        throw DataError("read_pgm: unsupported header in " + path.string());
    }
    f.get();  // single whitespace byte after maxval
    bytes.resize(static_cast<std::size_t>(w) * h);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (f.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw DataError("read_pgm: truncated pixel data in " + path.string());
    }
}

// ---------------------------------------------------------------------------
// Dataset directory I/O
// ---------------------------------------------------------------------------

void write_dataset(const Dataset& ds, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::set<std::string> seen;
    for (const auto& s : ds.samples) {
        if (!seen.insert(s.id).second) throw DataError("write_dataset: duplicate sample id '" + s.id + "'");
        if (s.image.h != s.mask.h || s.image.w != s.mask.w) {
            throw DataError("write_dataset: image/mask shape mismatch for '" + s.id + "'");
        }
    }
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");
    std::ofstream manifest(root / "manifest.tsv", std::ios::binary);
    if (!manifest) throw DataError("write_dataset: cannot open manifest under " + root.string());
    for (const auto& s : ds.samples) {
        std::vector<std::uint8_t> img_bytes(s.image.pix.size());
        for (std::size_t i = 0; i < img_bytes.size(); ++i) img_bytes[i] = unit_to_byte(s.image.pix[i]);
        std::vector<std::uint8_t> mask_bytes(s.mask.codes.size());
        for (std::size_t i = 0; i < mask_bytes.size(); ++i) mask_bytes[i] = mask_gray_level(s.mask.codes[i]);
        write_pgm(root / "images" / (s.id + ".pgm"), s.image.w, s.image.h, img_bytes);
        write_pgm(root / "masks" / (s.id + ".pgm"), s.mask.w, s.mask.h, mask_bytes);
        manifest << s.id << '\t' << "images/" << s.id << ".pgm" << '\t' << "masks/" << s.id << ".pgm" << '\t'
                 << ds.domain_tag << '\n';
    }
    if (!manifest) throw DataError("write_dataset: short write to manifest under " + root.string());
}

Dataset load_dataset(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    const fs::path manifest_path = root / "manifest.tsv";
    if (!fs::exists(manifest_path)) {
        throw DataError("load_dataset: no manifest.tsv under " + root.string());
    }
    std::ifstream manifest(manifest_path, std::ios::binary);
    if (!manifest) throw DataError("load_dataset: cannot open " + manifest_path.string());

    Dataset ds;
    std::set<std::string> ids;
    std::set<std::string> referenced_images, referenced_masks;
    std::string line;
    int line_no = 0;
    while (std::getline(manifest, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            const auto tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 4) {
            throw DataError("load_dataset: manifest line " + std::to_string(line_no) + " has " +
                            std::to_string(fields.size()) + " fields, expected 4");
        }
        GuidedSample s;
        s.id = fields[0];
        s.domain_tag = fields[3];
        if (!ids.insert(s.id).second) {
            throw DataError("load_dataset: duplicate id '" + s.id + "' at manifest line " + std::to_string(line_no));
        }
        if (ds.samples.empty()) {
            ds.domain_tag = s.domain_tag;
        } else if (s.domain_tag != ds.domain_tag) {
            throw DataError("load_dataset: domain mismatch at manifest line " + std::to_string(line_no) + ": '" +
                            s.domain_tag + "' vs '" + ds.domain_tag + "'");
        }

        int w = 0, h = 0;
        std::vector<std::uint8_t> bytes;
        read_pgm(root / fields[1], w, h, bytes);
        s.image.w = w;
        s.image.h = h;
        s.image.pix.resize(bytes.size());
        for (std::size_t i = 0; i < bytes.size(); ++i) s.image.pix[i] = byte_to_unit(bytes[i]);

        read_pgm(root / fields[2], w, h, bytes);
        if (w != s.image.w || h != s.image.h) {
            throw DataError("load_dataset: image/mask shape mismatch for '" + s.id + "'");
        }
        s.mask.w = w;
        s.mask.h = h;
        s.mask.codes.resize(bytes.size());
        for (std::size_t i = 0; i < bytes.size(); ++i) {
            std::uint8_t code = 255;
            for (std::uint8_t c = 0; c < 4; ++c) {
                if (bytes[i] == mask_gray_level(c)) code = c;
            }
            if (code == 255) {
                throw DataError("load_dataset: mask for '" + s.id + "' holds non-level byte " +
                                std::to_string(int(bytes[i])));
            }
            s.mask.codes[i] = code;
        }
        referenced_images.insert(fs::path(fields[1]).stem().string());
        referenced_masks.insert(fs::path(fields[2]).stem().string());
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw DataError("load_dataset: empty dataset under " + root.string());

    // Pairing check: every raster file must belong to a manifest pair.
    std::vector<std::string> offenders;
    for (const char* sub : {"images", "masks"}) {
        const auto& referenced = std::string(sub) == "images" ? referenced_images : referenced_masks;
        const auto& other = std::string(sub) == "images" ? referenced_masks : referenced_images;
        if (!fs::exists(root / sub)) continue;
        for (const auto& entry : fs::directory_iterator(root / sub)) {
            const std::string stem = entry.path().stem().string();
            if (!referenced.count(stem) || !other.count(stem)) {
                offenders.push_back(std::string(sub) + "/" + entry.path().filename().string());
            }
        }
    }
    if (!offenders.empty()) {
        std::sort(offenders.begin(), offenders.end());
        throw DataError("load_dataset: unpaired files under " + root.string() + ": " + sample_id_list(offenders));
    }

    // All samples must share one spatial shape.
    for (const auto& s : ds.samples) {
        if (s.image.h != ds.samples[0].image.h || s.image.w != ds.samples[0].image.w) {
            throw DataError("load_dataset: sample '" + s.id + "' has a different spatial shape");
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Phantom generator
// ---------------------------------------------------------------------------

namespace {

struct PhantomStyle {
    double half_aperture_rad;  // sector half opening angle
    double tissue, lv, la, myo;  // base display intensities
    int speckle_smooth;          // box-blur passes over the speckle field
};

PhantomStyle style_params(const std::string& name) {
    if (name == "a") return {38.0 * 3.14159265358979323846 / 180.0, 95.0, 25.0, 35.0, 200.0, 0};
    if (name == "b") return {26.0 * 3.14159265358979323846 / 180.0, 150.0, 50.0, 60.0, 235.0, 2};
    throw UsageError("generate_phantoms: unknown style '" + name + "'; valid styles: a, b");
}

void box_blur3(std::vector<double>& f, int h, int w) {
    std::vector<double> out(f.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            int cnt = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    acc += f[static_cast<std::size_t>(yy) * w + xx];
                    ++cnt;
                }
            }
            out[static_cast<std::size_t>(y) * w + x] = acc / cnt;
        }
    }
    f = std::move(out);
}

bool in_ellipse(double x, double y, double cx, double cy, double ax, double ay) {
    const double dx = (x - cx) / ax;
    const double dy = (y - cy) / ay;
    return dx * dx + dy * dy <= 1.0;
}

}  // namespace

std::vector<std::string> phantom_styles() { return {"a", "b"}; }

Dataset generate_phantoms(int n, int side, const std::string& style, std::uint64_t seed) {
    if (n < 1) throw UsageError("generate_phantoms: n must be >= 1");
    if (side < 16) throw UsageError("generate_phantoms: side must be >= 16");
    const PhantomStyle st = style_params(style);

    Dataset ds;
    ds.domain_tag = "phantom-" + style;
    ds.provenance = "synthetic sector phantom, style " + style;

    for (int index = 0; index < n; ++index) {
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "%s-%04d", style.c_str(), index);
        Rng rng(derive_seed(seed, idbuf));

        // Geometry jitter first (fixed draw count), then the speckle field.
        const double jlx = (rng.uniform() - 0.5) * 0.04;
        const double jly = (rng.uniform() - 0.5) * 0.04;
        const double slx = 1.0 + (rng.uniform() - 0.5) * 0.2;
        const double sly = 1.0 + (rng.uniform() - 0.5) * 0.2;
        const double jax = (rng.uniform() - 0.5) * 0.04;
        const double jay = (rng.uniform() - 0.5) * 0.04;
        const double sa = 1.0 + (rng.uniform() - 0.5) * 0.2;

        const double lv_cx = 0.5 + jlx, lv_cy = 0.40 + jly;
        const double lv_ax = 0.10 * slx, lv_ay = 0.15 * sly;
        const double myo_scale = 1.35;
        const double la_cx = 0.5 + jax, la_cy = 0.67 + jay;
        const double la_ax = 0.085 * sa, la_ay = 0.085 * sa;
        const double apex_x = 0.5, apex_y = 0.04;

        std::vector<double> speckle(static_cast<std::size_t>(side) * side);
        const double rayleigh_mean = std::sqrt(3.14159265358979323846 / 2.0);
        for (auto& v : speckle) {
            const double g1 = rng.normal(), g2 = rng.normal();
            v = std::sqrt(g1 * g1 + g2 * g2) / rayleigh_mean;
        }
        for (int pass = 0; pass < st.speckle_smooth; ++pass) box_blur3(speckle, side, side);

        GuidedSample s;
        s.id = idbuf;
        s.domain_tag = ds.domain_tag;
        s.image.h = s.image.w = side;
        s.mask.h = s.mask.w = side;
        s.image.pix.resize(speckle.size());
        s.mask.codes.resize(speckle.size());

        for (int yy = 0; yy < side; ++yy) {
            for (int xx = 0; xx < side; ++xx) {
                const std::size_t i = static_cast<std::size_t>(yy) * side + xx;
                const double x = (xx + 0.5) / side;
                const double y = (yy + 0.5) / side;
                const double dx = x - apex_x, dy = y - apex_y;
                const double r = std::hypot(dx, dy);
                const bool in_cone =
                    dy > 0.0 && std::atan2(std::fabs(dx), dy) <= st.half_aperture_rad && r >= 0.045 && r <= 0.93;
                std::uint8_t cls = kClassBackground;
                double base = 0.0;
                if (in_cone) {
                    if (in_ellipse(x, y, lv_cx, lv_cy, lv_ax, lv_ay)) {
                        cls = kClassLV;
                        base = st.lv;
                    } else if (in_ellipse(x, y, lv_cx, lv_cy, lv_ax * myo_scale, lv_ay * myo_scale)) {
                        cls = kClassMYO;
                        base = st.myo;
                    } else if (in_ellipse(x, y, la_cx, la_cy, la_ax, la_ay)) {
                        cls = kClassLA;
                        base = st.la;
                    } else {
                        base = st.tissue;
                    }
                }
                const double display = std::clamp(base * speckle[i], 0.0, 255.0);
                s.image.pix[i] = byte_to_unit(static_cast<std::uint8_t>(std::lround(display)));
                s.mask.codes[i] = cls;
            }
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Tensor views
// ---------------------------------------------------------------------------

Tensor<float> image_to_tensor(const Image& img) {
    std::vector<float> d(img.pix.begin(), img.pix.end());
    return Tensor<float>({1, 1, img.h, img.w}, std::move(d));
}

Image tensor_to_image(const Tensor<float>& t) {
    if (t.shape().size() != 4 || t.shape()[0] != 1 || t.shape()[1] != 1) {
        throw UsageError("tensor_to_image: expected [1,1,H,W], got " + shape_str(t.shape()));
    }
    Image img;
    img.h = static_cast<int>(t.shape()[2]);
    img.w = static_cast<int>(t.shape()[3]);
    img.pix.assign(t.data().begin(), t.data().end());
    return img;
}

Tensor<float> guide_to_tensor(const Mask& mask, bool onehot) {
    if (!onehot) {
        return image_to_tensor(encode_mask_gray(mask));
    }
    std::vector<float> d(4 * mask.codes.size(), 0.0f);
    for (std::size_t i = 0; i < mask.codes.size(); ++i) {
        if (mask.codes[i] > 3) throw DataError("mask: unknown class code " + std::to_string(int(mask.codes[i])));
        d[static_cast<std::size_t>(mask.codes[i]) * mask.codes.size() + i] = 1.0f;
    }
    return Tensor<float>({1, 4, mask.h, mask.w}, std::move(d));
}

}  // namespace echodiff
