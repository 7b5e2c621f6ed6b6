#pragma once

// Procedural toy datasets with known structure: multi-class shape images,
// a ring Gaussian mixture for analytic diffusion checks, and a
// directory-per-class image loader/exporter. All generators are
// deterministic functions of their seed.

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "tinydpm/errors.hpp"
#include "tinydpm/rng.hpp"
#include "tinydpm/tensor.hpp"

namespace tinydpm {

struct LabeledImages {
    Tensor x;            // [n, 3, side, side] in [-1, 1]
    std::vector<int> y;  // one label per row
};

struct LabeledPoints {
    DTensor x;           // [n, 2]
    std::vector<int> y;  // mode index
};

struct ShapesSpec {
    int classes = 4;
    int per_class = 500;
    int side = 16;
    uint64_t seed = 0;
};

struct MixtureSpec {
    int modes = 8;
    int per_mode = 1000;
    double radius = 1.0;
    double sigma = 0.05;
    uint64_t seed = 0;
};

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
    h = h - std::floor(h);
    double c = v * s, x = c * (1.0 - std::abs(std::fmod(h * 6.0, 2.0) - 1.0)), m = v - c;
    double r = 0, g = 0, b = 0;
    int sect = static_cast<int>(h * 6.0) % 6;
    switch (sect) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        default: r = c; b = x; break;
    }
    rgb[0] = r + m;
    rgb[1] = g + m;
    rgb[2] = b + m;
}

// signed distance (positive inside, pixel units) of point p from a shape
// family centered at the origin with nominal radius r and orientation th
inline double shape_sdf(int family, double px, double py, double r, double th) {
    double ct = std::cos(th), st = std::sin(th);
    double x = ct * px + st * py, y = -st * px + ct * py;  // rotate into shape frame
    switch (family) {
        case 0:  // disk
            return r - std::hypot(x, y);
        case 1:  // square
            return r * 0.82 - std::max(std::abs(x), std::abs(y));
        case 2: {  // equilateral triangle (inradius 0.55 r)
            double k = std::sqrt(3.0) / 2.0;
            double d = std::max({-y, k * x + 0.5 * y, -k * x + 0.5 * y});
            return r * 0.55 - d;
        }
        case 3: {  // cross: union of two perpendicular bars
            double w = r * 0.34;
            double dx = std::max(std::abs(x) - r, std::abs(y) - w);
            double dy = std::max(std::abs(y) - r, std::abs(x) - w);
            return -std::min(dx, dy);
        }
        case 4: {  // ring
            double t = r * 0.32;
            return t - std::abs(std::hypot(x, y) - r * 0.78);
        }
        default: {  // bar
            double w = r * 0.34;
            return -std::max(std::abs(x) - r, std::abs(y) - w);
        }
    }
}

inline constexpr int kShapeFamilies = 6;
inline constexpr double kGoldenHue = 0.61803398875;

}  // namespace detail

// One shape family per class, golden-angle base hue per class, randomized
// position/scale/orientation/hue jitter per image. Per-image draws come from
// Rng(seed).split(image index), so assembly order cannot matter.
inline LabeledImages gen_shapes_dataset(const ShapesSpec& spec) {
    if (spec.side < 16) throw UsageError("gen_shapes_dataset: side must be >= 16");
    if (spec.classes < 2) throw UsageError("gen_shapes_dataset: need >= 2 classes");
    if (spec.classes > detail::kShapeFamilies)
        throw DataError("gen_shapes_dataset: only " + std::to_string(detail::kShapeFamilies) +
                        " shape families available");
    if (spec.per_class < 1) throw UsageError("gen_shapes_dataset: per_class must be >= 1");
    int n = spec.classes * spec.per_class, s = spec.side;
    LabeledImages out;
    out.x = Tensor({n, 3, s, s});
    out.y.resize(static_cast<size_t>(n));
    Rng base(spec.seed);
    for (int i = 0; i < n; ++i) {
        int cls = i / spec.per_class;
        out.y[static_cast<size_t>(i)] = cls;
        Rng rng = base.split(static_cast<uint64_t>(i));
        double cx = s / 2.0 + (rng.next_uniform() - 0.5) * s * 0.18;
        double cy = s / 2.0 + (rng.next_uniform() - 0.5) * s * 0.18;
        double r = s * (0.26 + rng.next_uniform() * 0.10);
        double th = rng.next_uniform() * 2.0 * M_PI;
        double hue = detail::kGoldenHue * cls + 0.11 + (rng.next_uniform() - 0.5) * 0.16;
        double fg[3], bgv = 0.10 + rng.next_uniform() * 0.06;
        detail::hsv_to_rgb(hue, 0.85, 0.90, fg);
        for (int py = 0; py < s; ++py)
            for (int px = 0; px < s; ++px) {
                double sd = detail::shape_sdf(cls, px + 0.5 - cx, py + 0.5 - cy, r, th);
                double alpha = std::clamp(sd + 0.5, 0.0, 1.0);  // ~1px soft edge
                for (int c = 0; c < 3; ++c) {
                    double v = bgv + alpha * (fg[c] - bgv);
                    out.x.data()[static_cast<size_t>(((i * 3 + c) * s + py) * s + px)] =
                        static_cast<float>(std::clamp(2.0 * v - 1.0, -1.0, 1.0));
                }
            }
    }
    return out;
}

// Mode means equally spaced on a circle; isotropic Gaussian per mode.
inline LabeledPoints gen_gaussian_mixture(const MixtureSpec& spec) {
    if (spec.modes < 2) throw UsageError("gen_gaussian_mixture: need >= 2 modes");
    if (spec.sigma <= 0) throw UsageError("gen_gaussian_mixture: sigma must be > 0");
    if (spec.per_mode < 1) throw UsageError("gen_gaussian_mixture: per_mode must be >= 1");
    int n = spec.modes * spec.per_mode;
    LabeledPoints out;
    out.x = DTensor({n, 2});
    out.y.resize(static_cast<size_t>(n));
    Rng rng(spec.seed);
    for (int i = 0; i < n; ++i) {
        int mode = i / spec.per_mode;
        out.y[static_cast<size_t>(i)] = mode;
        double ang = 2.0 * M_PI * mode / spec.modes;
        out.x.data()[static_cast<size_t>(i * 2)] =
            spec.radius * std::cos(ang) + spec.sigma * rng.next_normal();
        out.x.data()[static_cast<size_t>(i * 2 + 1)] =
            spec.radius * std::sin(ang) + spec.sigma * rng.next_normal();
    }
    return out;
}

inline std::vector<std::array<double, 2>> mixture_means(const MixtureSpec& spec) {
    std::vector<std::array<double, 2>> m(static_cast<size_t>(spec.modes));
    for (int k = 0; k < spec.modes; ++k) {
        double ang = 2.0 * M_PI * k / spec.modes;
        m[static_cast<size_t>(k)] = {spec.radius * std::cos(ang), spec.radius * std::sin(ang)};
    }
    return m;
}

struct FolderDataset {
    Tensor x;
    std::vector<int> y;
    std::vector<std::string> class_names;  // lexicographic -> label
    int skipped = 0;
};

// Directory-per-class import. Labels follow lexicographic directory order;
// files are read in lexicographic order; unreadable files are skipped with a
// warning and counted.
inline FolderDataset load_image_folder(const std::string& path, int side = 16) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(path)) throw DataError("load_image_folder: not a directory: " + path);
    FolderDataset out;
    std::vector<std::pair<std::string, std::vector<std::string>>> classes;
    for (const auto& e : fs::directory_iterator(path))
        if (e.is_directory()) classes.emplace_back(e.path().filename().string(),
                                                   std::vector<std::string>{});
    std::sort(classes.begin(), classes.end());
    if (classes.empty()) throw DataError("load_image_folder: no class directories in " + path);
    for (auto& [name, files] : classes) {
        for (const auto& f : fs::directory_iterator(fs::path(path) / name))
            if (f.is_regular_file()) files.push_back(f.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("load_image_folder: empty class directory " + name);
    }
    std::vector<cv::Mat> mats;
    for (size_t cls = 0; cls < classes.size(); ++cls) {
        out.class_names.push_back(classes[cls].first);
        for (const auto& file : classes[cls].second) {
            cv::Mat img = cv::imread(file, cv::IMREAD_COLOR);
            if (img.empty()) {
                std::cerr << "warning: skipping unreadable image " << file << "\n";
                ++out.skipped;
                continue;
            }
            if (img.rows != side || img.cols != side)
                cv::resize(img, img, cv::Size(side, side), 0, 0, cv::INTER_AREA);
            mats.push_back(img);
            out.y.push_back(static_cast<int>(cls));
        }
    }
    if (mats.empty()) throw DataError("load_image_folder: no readable images in " + path);
    int n = static_cast<int>(mats.size());
    out.x = Tensor({n, 3, side, side});
    for (int i = 0; i < n; ++i)
        for (int r = 0; r < side; ++r)
            for (int c = 0; c < side; ++c) {
                cv::Vec3b bgr = mats[static_cast<size_t>(i)].at<cv::Vec3b>(r, c);
                for (int ch = 0; ch < 3; ++ch)  // BGR -> RGB, [0,255] -> [-1,1]
                    out.x.data()[static_cast<size_t>(((i * 3 + ch) * side + r) * side + c)] =
                        static_cast<float>(bgr[2 - ch] / 127.5 - 1.0);
            }
    return out;
}

// [-1,1] -> [0,255] with round-half-up: -1 -> 0, 0 -> 128, +1 -> 255
inline uint8_t to_pixel(float v) {
    double p = std::lround(127.5 * (std::clamp(v, -1.f, 1.f) + 1.0f));
    return static_cast<uint8_t>(std::clamp(p, 0.0, 255.0));
}

inline cv::Mat image_row_to_mat(const Tensor& x, int row) {
    if (x.rank() != 4 || x.dim(1) != 3) throw ShapeError("image_row_to_mat: need [n,3,h,w]");
    int h = x.dim(2), w = x.dim(3);
    cv::Mat img(h, w, CV_8UC3);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            cv::Vec3b& bgr = img.at<cv::Vec3b>(r, c);
            for (int ch = 0; ch < 3; ++ch)
                bgr[2 - ch] =
                    to_pixel(x.data()[static_cast<size_t>(((row * 3 + ch) * h + r) * w + c)]);
        }
    return img;
}

// PNG export mirroring the import layout, plus a manifest (path, class,
// split). Returns the number of files written.
inline int save_dataset_png(const std::string& dir, const LabeledImages& data,
                            const std::vector<std::string>& class_names = {},
                            const std::string& split = "train") {
    namespace fs = std::filesystem;
    if (!data.x.defined() || data.x.dim(0) != static_cast<int>(data.y.size()))
        throw ShapeError("save_dataset_png: images/labels misaligned");
    fs::create_directories(dir);
    std::ofstream manifest(fs::path(dir) / "manifest.csv", std::ios::app);
    if (!manifest) throw DataError("save_dataset_png: cannot write manifest in " + dir);
    if (manifest.tellp() == 0) manifest << "path,class,split\n";
    int written = 0;
    for (int i = 0; i < data.x.dim(0); ++i) {
        int cls = data.y[static_cast<size_t>(i)];
        std::string cname = cls < static_cast<int>(class_names.size())
                                ? class_names[static_cast<size_t>(cls)]
                                : "class_" + std::to_string(cls);
        fs::create_directories(fs::path(dir) / cname);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "img_%06d.png", i);
        std::string rel = cname + "/" + buf;
        if (!cv::imwrite((fs::path(dir) / rel).string(), image_row_to_mat(data.x, i)))
            throw DataError("save_dataset_png: failed to write " + rel);
        manifest << rel << ',' << cname << ',' << split << '\n';
        ++written;
    }
    return written;
}

// Baseline augmentation: random rotation over the full 360 degrees plus a
// fair-coin horizontal flip, per image. Draw order per image: angle, then
// flip.
inline Tensor augment_rotate_flip(const Tensor& x, Rng& rng) {
    if (x.rank() != 4) throw ShapeError("augment_rotate_flip: need [n,c,h,w]");
    int n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor out(x.shape());
    cv::Mat plane(h, w, CV_32F), rotated;
    for (int i = 0; i < n; ++i) {
        double angle = rng.next_uniform() * 360.0;
        bool flip = rng.next_u32() & 1u;
        cv::Mat rot = cv::getRotationMatrix2D(cv::Point2f(w / 2.f, h / 2.f), angle, 1.0);
        for (int c = 0; c < ch; ++c) {
            size_t at = static_cast<size_t>((i * ch + c) * h * w);
            std::copy_n(x.data().begin() + at, static_cast<size_t>(h * w),
                        reinterpret_cast<float*>(plane.data));
            cv::warpAffine(plane, rotated, rot, plane.size(), cv::INTER_LINEAR,
                           cv::BORDER_REPLICATE);
            if (flip) cv::flip(rotated, rotated, 1);
            std::copy_n(reinterpret_cast<float*>(rotated.data), static_cast<size_t>(h * w),
                        out.data().begin() + at);
        }
    }
    for (auto& v : out.data()) v = std::clamp(v, -1.f, 1.f);
    return out;
}

}  // namespace tinydpm
