#pragma once

// Visual and tabular exports: sample grids and the nearest-neighbor
// report (top row synthetic, neighbors stacked beneath).

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tinydpm/datasets.hpp"
#include "tinydpm/metrics.hpp"

namespace tinydpm {

namespace detail {

// [-1,1] tile -> 8-bit BGR; single-channel inputs are replicated to gray
inline cv::Mat tile_to_mat(const Tensor& x, int row) {
    int c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c != 1 && c != 3) throw ShapeError("sample grid: need 1 or 3 channels");
    cv::Mat img(h, w, CV_8UC3);
    for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col) {
            cv::Vec3b& bgr = img.at<cv::Vec3b>(r, col);
            for (int ch = 0; ch < 3; ++ch) {
                int src = c == 1 ? 0 : ch;
                bgr[2 - ch] = static_cast<uchar>(
                    to_pixel(x.data()[static_cast<size_t>(((row * c + src) * h + r) * w + col)]));
            }
        }
    return img;
}

}  // namespace detail

// Row-major tiling; with labels, one column per class and samples stack
// downward in input order. Pixel map per to_pixel: -1 -> 0, 0 -> 128,
// +1 -> 255 (round half away from zero). Empty cells stay black.
inline cv::Mat sample_grid_image(const Tensor& samples, int cols,
                                 const std::vector<int>* labels = nullptr) {
    if (!samples.defined() || samples.rank() != 4 || samples.dim(0) < 1)
        throw UsageError("sample grid: need non-empty [n,c,h,w] samples");
    int n = samples.dim(0), h = samples.dim(2), w = samples.dim(3);
    std::vector<std::pair<int, int>> cell(static_cast<size_t>(n));  // sample -> (row, col)
    int rows = 0;
    if (labels) {
        if (static_cast<int>(labels->size()) != n)
            throw UsageError("sample grid: labels must match samples");
        int m = 0;
        for (int y : *labels) {
            if (y < 0) throw DataError("sample grid: negative label");
            m = std::max(m, y + 1);
        }
        cols = m;
        std::vector<int> fill(static_cast<size_t>(m), 0);
        for (int i = 0; i < n; ++i) {
            int y = (*labels)[static_cast<size_t>(i)];
            cell[static_cast<size_t>(i)] = {fill[static_cast<size_t>(y)]++, y};
        }
        rows = *std::max_element(fill.begin(), fill.end());
    } else {
        if (cols < 1) throw UsageError("sample grid: need at least one column");
        cols = std::min(cols, n);
        rows = (n + cols - 1) / cols;
        for (int i = 0; i < n; ++i) cell[static_cast<size_t>(i)] = {i / cols, i % cols};
    }
    cv::Mat grid = cv::Mat::zeros(rows * h, cols * w, CV_8UC3);
    for (int i = 0; i < n; ++i) {
        auto [r, c] = cell[static_cast<size_t>(i)];
        detail::tile_to_mat(samples, i).copyTo(grid(cv::Rect(c * w, r * h, w, h)));
    }
    return grid;
}

inline void export_sample_grid(const std::string& path, const Tensor& samples, int cols,
                               const std::vector<int>* labels = nullptr) {
    if (!cv::imwrite(path, sample_grid_image(samples, cols, labels)))
        throw DataError("sample grid: failed to write " + path);
}

// ---------------------------------------------------------------------------
// nearest neighbors

struct NeighborRow {
    int gen_index = 0;
    std::vector<int> train_index;  // top_n entries, nearest first
    std::vector<double> distance;  // Euclidean, same order
};

// Feature-space Euclidean top-n per generated row. Ties break toward the
// lower training index, so results are deterministic for a fixed ordering.
inline std::vector<NeighborRow> nearest_neighbors(const FeatureSet& gen, const FeatureSet& train,
                                                  int top_n = 3) {
    if (top_n < 1) throw UsageError("nearest_neighbors: top_n must be >= 1");
    if (top_n > train.rows())
        throw UsageError("nearest_neighbors: top_n exceeds training set size");
    if (gen.dim() != train.dim()) throw ShapeError("nearest_neighbors: feature dim mismatch");
    std::vector<NeighborRow> out;
    for (int i = 0; i < gen.rows(); ++i) {
        std::vector<std::pair<double, int>> d(static_cast<size_t>(train.rows()));
        for (int j = 0; j < train.rows(); ++j)
            d[static_cast<size_t>(j)] = {detail::row_dist2(gen.phi, i, train.phi, j), j};
        std::partial_sort(d.begin(), d.begin() + top_n, d.end());
        NeighborRow row;
        row.gen_index = i;
        for (int r = 0; r < top_n; ++r) {
            row.train_index.push_back(d[static_cast<size_t>(r)].second);
            row.distance.push_back(std::sqrt(d[static_cast<size_t>(r)].first));
        }
        out.push_back(std::move(row));
    }
    return out;
}

inline void write_nn_csv(const std::string& path, const std::vector<NeighborRow>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("nearest_neighbors: cannot open " + path);
    out << "gen_index,rank,train_index,distance\n";
    for (const auto& r : rows)
        for (size_t k = 0; k < r.train_index.size(); ++k)
            out << r.gen_index << ',' << (k + 1) << ',' << r.train_index[k] << ','
                << r.distance[k] << '\n';
    if (!out) throw DataError("nearest_neighbors: write failed for " + path);
}

// Column per generated sample: the sample on top, neighbors beneath in
// rank order.
inline cv::Mat nn_grid_image(const Tensor& gen_images, const Tensor& train_images,
                             const std::vector<NeighborRow>& rows) {
    if (!gen_images.defined() || !train_images.defined() || rows.empty())
        throw UsageError("nearest_neighbors: empty grid input");
    if (gen_images.dim(2) != train_images.dim(2) || gen_images.dim(3) != train_images.dim(3) ||
        gen_images.dim(1) != train_images.dim(1))
        throw ShapeError("nearest_neighbors: image shape mismatch");
    int h = gen_images.dim(2), w = gen_images.dim(3);
    int top_n = static_cast<int>(rows.front().train_index.size());
    int cols = static_cast<int>(rows.size());
    cv::Mat grid = cv::Mat::zeros((top_n + 1) * h, cols * w, CV_8UC3);
    for (int c = 0; c < cols; ++c) {
        const auto& row = rows[static_cast<size_t>(c)];
        detail::tile_to_mat(gen_images, row.gen_index)
            .copyTo(grid(cv::Rect(c * w, 0, w, h)));
        for (int r = 0; r < top_n; ++r)
            detail::tile_to_mat(train_images, row.train_index[static_cast<size_t>(r)])
                .copyTo(grid(cv::Rect(c * w, (r + 1) * h, w, h)));
    }
    return grid;
}

}  // namespace tinydpm
