#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tinydpm/datasets.hpp"

using namespace tinydpm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Shapes, DeterministicBalancedAndInRange) {
    ShapesSpec spec;
    spec.classes = 4;
    spec.per_class = 25;
    spec.seed = 3;
    auto a = gen_shapes_dataset(spec);
    auto b = gen_shapes_dataset(spec);
    EXPECT_EQ(a.x.shape(), (Shape{100, 3, 16, 16}));
    EXPECT_EQ(a.x.data(), b.x.data());
    EXPECT_EQ(a.y, b.y);
    std::vector<int> counts(4, 0);
    for (int y : a.y) counts[static_cast<size_t>(y)]++;
    for (int c : counts) EXPECT_EQ(c, 25);
    for (float v : a.x.data()) {
        EXPECT_GE(v, -1.f);
        EXPECT_LE(v, 1.f);
    }
    spec.seed = 4;
    auto c = gen_shapes_dataset(spec);
    EXPECT_NE(a.x.data(), c.x.data());
}

TEST(Shapes, ClassesAreVisuallyDistinct) {
    ShapesSpec spec;
    spec.classes = 6;
    spec.per_class = 40;
    spec.seed = 5;
    auto d = gen_shapes_dataset(spec);
    int px = 3 * 16 * 16;
    std::vector<std::vector<double>> mean(6, std::vector<double>(static_cast<size_t>(px), 0.0));
    for (int i = 0; i < d.x.dim(0); ++i)
        for (int j = 0; j < px; ++j)
            mean[static_cast<size_t>(d.y[static_cast<size_t>(i)])][static_cast<size_t>(j)] +=
                d.x.data()[static_cast<size_t>(i * px + j)] / 40.0;
    for (int a = 0; a < 6; ++a)
        for (int b = a + 1; b < 6; ++b) {
            double dist = 0;
            for (int j = 0; j < px; ++j) {
                double delta = mean[static_cast<size_t>(a)][static_cast<size_t>(j)] -
                               mean[static_cast<size_t>(b)][static_cast<size_t>(j)];
                dist += delta * delta;
            }
            EXPECT_GT(std::sqrt(dist), 1.0) << "classes " << a << " vs " << b;
        }
}

TEST(Shapes, RejectsBadSpecs) {
    ShapesSpec spec;
    spec.side = 8;
    EXPECT_THROW(gen_shapes_dataset(spec), UsageError);
    spec.side = 16;
    spec.classes = 7;
    EXPECT_THROW(gen_shapes_dataset(spec), DataError);
    spec.classes = 2;
    spec.per_class = 0;
    EXPECT_THROW(gen_shapes_dataset(spec), UsageError);
}

TEST(Mixture, ModeMeansOnTheRing) {
    MixtureSpec spec;
    spec.modes = 8;
    spec.per_mode = 2000;
    spec.sigma = 0.05;
    spec.seed = 6;
    auto means = mixture_means(spec);
    EXPECT_NEAR(means[0][0], 1.0, 1e-15);
    EXPECT_NEAR(means[0][1], 0.0, 1e-15);
    EXPECT_NEAR(means[2][0], 0.0, 1e-15);
    EXPECT_NEAR(means[2][1], 1.0, 1e-15);
    auto d = gen_gaussian_mixture(spec);
    EXPECT_EQ(d.x.shape(), (Shape{16000, 2}));
    std::vector<std::array<double, 2>> mu(8, {0, 0});
    for (int i = 0; i < 16000; ++i) {
        mu[static_cast<size_t>(d.y[static_cast<size_t>(i)])][0] +=
            d.x.data()[static_cast<size_t>(2 * i)] / 2000.0;
        mu[static_cast<size_t>(d.y[static_cast<size_t>(i)])][1] +=
            d.x.data()[static_cast<size_t>(2 * i + 1)] / 2000.0;
    }
    for (int k = 0; k < 8; ++k) {  // SE = sigma/sqrt(n) ~ 0.001; allow 4 SE
        EXPECT_NEAR(mu[static_cast<size_t>(k)][0], means[static_cast<size_t>(k)][0], 0.005);
        EXPECT_NEAR(mu[static_cast<size_t>(k)][1], means[static_cast<size_t>(k)][1], 0.005);
    }
}

TEST(Mixture, VanishingSigmaCollapsesToMeans) {
    MixtureSpec spec;
    spec.modes = 4;
    spec.per_mode = 10;
    spec.sigma = 1e-9;
    auto d = gen_gaussian_mixture(spec);
    auto means = mixture_means(spec);
    for (int i = 0; i < d.x.dim(0); ++i) {
        auto& m = means[static_cast<size_t>(d.y[static_cast<size_t>(i)])];
        EXPECT_NEAR(d.x.data()[static_cast<size_t>(2 * i)], m[0], 1e-6);
        EXPECT_NEAR(d.x.data()[static_cast<size_t>(2 * i + 1)], m[1], 1e-6);
    }
}

TEST(Mixture, PerModeCovarianceIsIsotropic) {
    MixtureSpec spec;
    spec.modes = 2;
    spec.per_mode = 10000;
    spec.sigma = 0.3;
    spec.seed = 7;
    auto d = gen_gaussian_mixture(spec);
    for (int mode = 0; mode < 2; ++mode) {
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        int n = 0;
        for (int i = 0; i < d.x.dim(0); ++i) {
            if (d.y[static_cast<size_t>(i)] != mode) continue;
            double x = d.x.data()[static_cast<size_t>(2 * i)];
            double y = d.x.data()[static_cast<size_t>(2 * i + 1)];
            sx += x;
            sy += y;
            ++n;
        }
        double mx = sx / n, my = sy / n;
        for (int i = 0; i < d.x.dim(0); ++i) {
            if (d.y[static_cast<size_t>(i)] != mode) continue;
            double x = d.x.data()[static_cast<size_t>(2 * i)] - mx;
            double y = d.x.data()[static_cast<size_t>(2 * i + 1)] - my;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        double var = spec.sigma * spec.sigma;
        EXPECT_NEAR(sxx / (n - 1), var, 0.1 * var);
        EXPECT_NEAR(syy / (n - 1), var, 0.1 * var);
        EXPECT_LT(std::abs(sxy / (n - 1)), 0.1 * var);
    }
}

TEST(Mixture, RejectsBadSpecs) {
    MixtureSpec spec;
    spec.modes = 1;
    EXPECT_THROW(gen_gaussian_mixture(spec), UsageError);
    spec.modes = 4;
    spec.sigma = 0.0;
    EXPECT_THROW(gen_gaussian_mixture(spec), UsageError);
}

TEST(PixelMapping, DocumentedEndpoints) {
    EXPECT_EQ(to_pixel(-1.f), 0);
    EXPECT_EQ(to_pixel(0.f), 128);
    EXPECT_EQ(to_pixel(1.f), 255);
    EXPECT_EQ(to_pixel(-2.f), 0);  // clamped
    EXPECT_EQ(to_pixel(2.f), 255);
}

TEST(FolderIO, RoundTripWithLexicographicLabels) {
    TempDir tmp("tinydpm_folder_rt");
    ShapesSpec spec;
    spec.classes = 2;
    spec.per_class = 6;
    spec.seed = 8;
    auto d = gen_shapes_dataset(spec);
    int written = save_dataset_png(tmp.path.string(), d, {"b_second", "a_first"});
    EXPECT_EQ(written, 12);
    auto back = load_image_folder(tmp.path.string(), 16);
    EXPECT_EQ(back.x.dim(0), 12);
    EXPECT_EQ(back.skipped, 0);
    ASSERT_EQ(back.class_names.size(), 2u);
    EXPECT_EQ(back.class_names[0], "a_first");  // lexicographic order wins
    EXPECT_EQ(back.class_names[1], "b_second");
    // the original class 0 was exported under "b_second", so it reloads as 1
    int flipped = 0;
    for (size_t i = 0; i < back.y.size(); ++i) flipped += back.y[i] == 1;
    EXPECT_EQ(flipped, 6);
    // 8-bit quantization bounds the round-trip error
    double start = back.x.data()[0];
    EXPECT_TRUE(std::isfinite(start));
    for (float v : back.x.data()) {
        EXPECT_GE(v, -1.f);
        EXPECT_LE(v, 1.f);
    }
}

TEST(FolderIO, QuantizationRoundTripIsTight) {
    TempDir tmp("tinydpm_folder_quant");
    ShapesSpec spec;
    spec.classes = 2;
    spec.per_class = 3;
    spec.seed = 9;
    auto d = gen_shapes_dataset(spec);
    save_dataset_png(tmp.path.string(), d);
    auto back = load_image_folder(tmp.path.string(), 16);
    ASSERT_EQ(back.x.data().size(), d.x.data().size());
    // labels preserved with default class_<c> names
    EXPECT_EQ(back.y, d.y);
    double worst = 0;
    for (size_t i = 0; i < d.x.data().size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(back.x.data()[i]) -
                                         static_cast<double>(d.x.data()[i])));
    EXPECT_LT(worst, 1.0 / 127.5);
}

TEST(FolderIO, SkipsCorruptFilesWithCount) {
    TempDir tmp("tinydpm_folder_corrupt");
    ShapesSpec spec;
    spec.classes = 2;
    spec.per_class = 4;
    spec.seed = 10;
    save_dataset_png(tmp.path.string(), gen_shapes_dataset(spec));
    std::ofstream bad(tmp.path / "class_0" / "zz_broken.png");
    bad << "this is not a png";
    bad.close();
    auto back = load_image_folder(tmp.path.string(), 16);
    EXPECT_EQ(back.skipped, 1);
    EXPECT_EQ(back.x.dim(0), 8);
}

TEST(FolderIO, ResizeToRequestedSide) {
    TempDir tmp("tinydpm_folder_resize");
    ShapesSpec spec;
    spec.classes = 2;
    spec.per_class = 2;
    spec.side = 32;
    spec.seed = 11;
    save_dataset_png(tmp.path.string(), gen_shapes_dataset(spec));
    auto back = load_image_folder(tmp.path.string(), 16);
    EXPECT_EQ(back.x.shape(), (Shape{4, 3, 16, 16}));
}

TEST(FolderIO, EmptyClassDirectoryRejected) {
    TempDir tmp("tinydpm_folder_empty");
    fs::create_directories(tmp.path / "a");
    fs::create_directories(tmp.path / "b");
    std::ofstream(tmp.path / "a" / "x.png") << "junk";
    EXPECT_THROW(load_image_folder(tmp.path.string(), 16), DataError);
    EXPECT_THROW(load_image_folder("/tmp/tinydpm_no_such_dir", 16), DataError);
}

TEST(FolderIO, ManifestListsEveryFile) {
    TempDir tmp("tinydpm_folder_manifest");
    ShapesSpec spec;
    spec.classes = 2;
    spec.per_class = 2;
    spec.seed = 12;
    save_dataset_png(tmp.path.string(), gen_shapes_dataset(spec), {}, "test");
    std::ifstream in(tmp.path / "manifest.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "path,class,split");
    int rows = 0;
    while (std::getline(in, line)) {
        EXPECT_NE(line.find(",test"), std::string::npos);
        ++rows;
    }
    EXPECT_EQ(rows, 4);
}

TEST(Augmentation, DeterministicShapePreservingAndBounded) {
    ShapesSpec spec;
    spec.classes = 2;
    spec.per_class = 5;
    spec.seed = 13;
    auto d = gen_shapes_dataset(spec);
    Rng r1(14), r2(14), r3(15);
    Tensor a = augment_rotate_flip(d.x, r1);
    Tensor b = augment_rotate_flip(d.x, r2);
    Tensor c = augment_rotate_flip(d.x, r3);
    EXPECT_EQ(a.shape(), d.x.shape());
    EXPECT_EQ(a.data(), b.data());
    EXPECT_NE(a.data(), c.data());
    EXPECT_NE(a.data(), d.x.data());
    for (float v : a.data()) {
        EXPECT_GE(v, -1.f);
        EXPECT_LE(v, 1.f);
    }
}

TEST(Augmentation, KeepsOverallIntensityScale) {
    // rotation with replicated borders and flips should not bleach or darken
    // the set on average
    ShapesSpec spec;
    spec.classes = 3;
    spec.per_class = 20;
    spec.seed = 16;
    auto d = gen_shapes_dataset(spec);
    Rng rng(17);
    Tensor a = augment_rotate_flip(d.x, rng);
    double m0 = 0, m1 = 0;
    for (float v : d.x.data()) m0 += v;
    for (float v : a.data()) m1 += v;
    m0 /= static_cast<double>(d.x.data().size());
    m1 /= static_cast<double>(a.data().size());
    EXPECT_NEAR(m0, m1, 0.05);
}
