// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace nsad {

struct Dataset {
  Tensor images;  // N x C x H x W, values in [0,1]
  std::vector<int> labels;
  size_t classes = 10;
  std::string split = "train";
  size_t size() const { return labels.size(); }
};

// IDX ingestion (big-endian, magic 0x00000803 images / 0x00000801 labels).
// Pixels are scaled by 1/255 into the working precision.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 Precision prec);
void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path);

// Synthetic digit-like glyphs: ten fixed 7x7 templates upscaled and jittered
// into 28x28 with seeded intensity, box-blurred and byte-quantized onto an
// exactly zero background. The quantized value grid is what makes pooling
// ties reachable, as in byte-encoded scan data. Class-balanced labels.
Dataset synth_digits(size_t count, uint64_t seed, Precision prec);

// Images with flat patches that guarantee at least ceil(tie_fraction * W)
// tied pooling windows after an all-ones conv kernel, W being the number of
// aligned 2x2 windows. tie_fraction 0 yields strictly increasing ramps.
Dataset synth_tied(size_t count, double tie_fraction, uint64_t seed, Precision prec,
                   size_t kernel = 5, size_t win = 2);

struct TieScan {
  size_t tied = 0;
  size_t windows = 0;
};

// Exhaustive oracle: all-ones kernel conv in double arithmetic, then an
// aligned win x win scan counting windows whose max is attained twice.
TieScan count_tied_windows(const Dataset& ds, size_t image_index, size_t kernel, size_t win);

// Seed-deterministic subset, label-stratified within +-1 per class, returned
// in seeded shuffled order.
Dataset subset_stratified(const Dataset& ds, size_t count, uint64_t seed);

Tensor slice_images(const Tensor& images, size_t start, size_t count);
std::vector<int> slice_labels(const std::vector<int>& labels, size_t start, size_t count);

// FNV-1a over image bytes and labels; used for artifact provenance.
uint64_t dataset_fingerprint(const Dataset& ds);

}  // namespace nsad
