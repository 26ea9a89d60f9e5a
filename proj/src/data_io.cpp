// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include "data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "error.hpp"
#include "rng.hpp"

namespace nsad {

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  NSAD_CHECK(in.good(), ErrorKind::Data, "cannot open '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

uint32_t read_u32be(const std::vector<uint8_t>& b, size_t off, const std::string& path) {
  NSAD_CHECK(off + 4 <= b.size(), ErrorKind::Data,
             "'" + path + "' truncated: need 4 bytes at byte offset " + std::to_string(off) +
                 ", file has " + std::to_string(b.size()));
  return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) | (uint32_t(b[off + 2]) << 8) |
         uint32_t(b[off + 3]);
}

void write_u32be(std::ofstream& out, uint32_t v) {
  uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::string hex32(uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

// 7x7 glyph templates for the synthetic digit set.
const char* const kGlyphs[10][7] = {
    {".#####.", "#.....#", "#....##", "#..#..#", "##....#", "#.....#", ".#####."},
    {"...#...", "..##...", ".#.#...", "...#...", "...#...", "...#...", ".#####."},
    {".#####.", "#.....#", "......#", "..###..", ".#.....", "#......", "#######"},
    {".#####.", "......#", "......#", "..####.", "......#", "......#", ".#####."},
    {"#...#..", "#...#..", "#...#..", "#######", "....#..", "....#..", "....#.."},
    {"#######", "#......", "#......", "######.", "......#", "......#", "######."},
    {".#####.", "#......", "#......", "######.", "#.....#", "#.....#", ".#####."},
    {"#######", "......#", ".....#.", "....#..", "...#...", "..#....", ".#....."},
    {".#####.", "#.....#", "#.....#", ".#####.", "#.....#", "#.....#", ".#####."},
    {".#####.", "#.....#", "#.....#", ".######", "......#", "......#", ".#####."},
};

constexpr size_t kSide = 28;

void unit_conv(const double* img, size_t kernel, std::vector<double>& out, size_t& oh,
               size_t& ow) {
  oh = kSide - kernel + 1;
  ow = kSide - kernel + 1;
  out.assign(oh * ow, 0.0);
  for (size_t i = 0; i < oh; ++i) {
    for (size_t j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (size_t u = 0; u < kernel; ++u)
        for (size_t v = 0; v < kernel; ++v) acc += img[(i + u) * kSide + (j + v)];
      out[i * ow + j] = acc;
    }
  }
}

TieScan scan_plane(const double* img, size_t kernel, size_t win) {
  std::vector<double> conv;
  size_t oh = 0, ow = 0;
  unit_conv(img, kernel, conv, oh, ow);
  TieScan scan;
  size_t ph = oh / win, pw = ow / win;
  scan.windows = ph * pw;
  for (size_t a = 0; a < ph; ++a) {
    for (size_t b = 0; b < pw; ++b) {
      double best = conv[(a * win) * ow + b * win];
      size_t hits = 0;
      for (size_t u = 0; u < win; ++u)
        for (size_t v = 0; v < win; ++v) {
          double c = conv[(a * win + u) * ow + (b * win + v)];
          if (c > best) best = c;
        }
      for (size_t u = 0; u < win; ++u)
        for (size_t v = 0; v < win; ++v)
          if (conv[(a * win + u) * ow + (b * win + v)] == best) ++hits;
      if (hits >= 2) ++scan.tied;
    }
  }
  return scan;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 Precision prec) {
  std::vector<uint8_t> ib = read_file(images_path);
  uint32_t magic = read_u32be(ib, 0, images_path);
  NSAD_CHECK(magic == kImageMagic, ErrorKind::Data,
             "'" + images_path + "': bad IDX image magic at byte 0: got " + hex32(magic) +
                 ", expected " + hex32(kImageMagic));
  uint32_t n = read_u32be(ib, 4, images_path);
  uint32_t rows = read_u32be(ib, 8, images_path);
  uint32_t cols = read_u32be(ib, 12, images_path);
  size_t expected = 16 + size_t(n) * rows * cols;
  NSAD_CHECK(ib.size() == expected, ErrorKind::Data,
             "'" + images_path + "' truncated: expected " + std::to_string(expected) +
                 " bytes for " + std::to_string(n) + " images of " + std::to_string(rows) + "x" +
                 std::to_string(cols) + ", got " + std::to_string(ib.size()));

  std::vector<uint8_t> lb = read_file(labels_path);
  uint32_t lmagic = read_u32be(lb, 0, labels_path);
  NSAD_CHECK(lmagic == kLabelMagic, ErrorKind::Data,
             "'" + labels_path + "': bad IDX label magic at byte 0: got " + hex32(lmagic) +
                 ", expected " + hex32(kLabelMagic));
  uint32_t ln = read_u32be(lb, 4, labels_path);
  NSAD_CHECK(lb.size() == 8 + size_t(ln), ErrorKind::Data,
             "'" + labels_path + "' truncated: expected " + std::to_string(8 + size_t(ln)) +
                 " bytes, got " + std::to_string(lb.size()));
  NSAD_CHECK(ln == n, ErrorKind::Data,
             "image/label count mismatch: " + std::to_string(n) + " images vs " +
                 std::to_string(ln) + " labels");

  Dataset ds;
  ds.images = Tensor::zeros({n, 1, rows, cols}, prec);
  for (size_t i = 0; i < size_t(n) * rows * cols; ++i)
    ds.images.data[i] = round_to(double(ib[16 + i]) / 255.0, prec);
  ds.labels.resize(n);
  int max_label = 0;
  for (size_t i = 0; i < n; ++i) {
    ds.labels[i] = lb[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.classes = static_cast<size_t>(std::max(10, max_label + 1));
  return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path) {
  size_t n = ds.size();
  size_t rows = ds.images.shape[2], cols = ds.images.shape[3];
  {
    std::ofstream out(images_path, std::ios::binary);
    NSAD_CHECK(out.good(), ErrorKind::Data, "cannot write '" + images_path + "'");
    write_u32be(out, kImageMagic);
    write_u32be(out, static_cast<uint32_t>(n));
    write_u32be(out, static_cast<uint32_t>(rows));
    write_u32be(out, static_cast<uint32_t>(cols));
    std::vector<uint8_t> bytes(n * rows * cols);
    for (size_t i = 0; i < bytes.size(); ++i) {
      double v = ds.images.data[i] * 255.0;
      v = std::min(255.0, std::max(0.0, std::nearbyint(v)));
      bytes[i] = static_cast<uint8_t>(v);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  {
    std::ofstream out(labels_path, std::ios::binary);
    NSAD_CHECK(out.good(), ErrorKind::Data, "cannot write '" + labels_path + "'");
    write_u32be(out, kLabelMagic);
    write_u32be(out, static_cast<uint32_t>(n));
    std::vector<uint8_t> bytes(n);
    for (size_t i = 0; i < n; ++i) bytes[i] = static_cast<uint8_t>(ds.labels[i]);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
}

Dataset synth_digits(size_t count, uint64_t seed, Precision prec) {
  Dataset ds;
  ds.images = Tensor::zeros({count, 1, kSide, kSide}, prec);
  ds.labels.resize(count);
  std::vector<uint32_t> block(10);
  std::vector<double> sharp(kSide * kSide);
  for (size_t i = 0; i < count; ++i) {
    if (i % 10 == 0) fill_permutation(block, 10, mix_seed(seed, 0x10000 + i / 10));
    int digit = static_cast<int>(block[i % 10]);
    ds.labels[i] = digit;
    SplitMix64 gen(mix_seed(seed, i));
    size_t dr = gen.bounded(8), dc = gen.bounded(8);
    double intensity = gen.uniform(0.62, 1.0);
    std::fill(sharp.begin(), sharp.end(), 0.0);
    for (size_t r = 0; r < 7; ++r) {
      for (size_t c = 0; c < 7; ++c) {
        if (kGlyphs[digit][r][c] != '#') continue;
        for (size_t ur = 0; ur < 3; ++ur)
          for (size_t uc = 0; uc < 3; ++uc) {
            size_t rr = dr + 3 * r + ur, cc = dc + 3 * c + uc;
            sharp[rr * kSide + cc] = intensity;
          }
      }
    }
    // A box blur plus byte quantization mimics scanner anti-aliasing: stroke
    // cores saturate at one level, edges take a handful of shared levels, and
    // the background stays exactly zero. The exact repeats are load-bearing:
    // equal pixels produce tied pooling windows downstream, which is the
    // phenomenon the experiments measure.
    double* img = &ds.images.data[i * kSide * kSide];
    for (size_t r = 0; r < kSide; ++r) {
      for (size_t c = 0; c < kSide; ++c) {
        double acc = 0;
        for (int br = -1; br <= 1; ++br)
          for (int bc = -1; bc <= 1; ++bc) {
            int rr = static_cast<int>(r) + br, cc = static_cast<int>(c) + bc;
            if (rr < 0 || cc < 0 || rr >= static_cast<int>(kSide) || cc >= static_cast<int>(kSide))
              continue;
            acc += sharp[static_cast<size_t>(rr) * kSide + static_cast<size_t>(cc)];
          }
        double byte = std::min(255.0, std::nearbyint(acc / 9.0 * 255.0));
        img[r * kSide + c] = round_to(byte / 255.0, prec);
      }
    }
  }
  return ds;
}

TieScan count_tied_windows(const Dataset& ds, size_t image_index, size_t kernel, size_t win) {
  NSAD_CHECK(image_index < ds.size(), ErrorKind::Data, "image index out of range");
  NSAD_CHECK(ds.images.shape[2] == kSide && ds.images.shape[3] == kSide, ErrorKind::Data,
             "tie scan expects 28x28 images");
  const double* img = &ds.images.data[image_index * kSide * kSide];
  return scan_plane(img, kernel, win);
}

Dataset synth_tied(size_t count, double tie_fraction, uint64_t seed, Precision prec,
                   size_t kernel, size_t win) {
  NSAD_CHECK(tie_fraction >= 0.0 && tie_fraction <= 1.0, ErrorKind::Config,
             "tie_fraction must lie in [0,1]");
  Dataset ds;
  ds.images = Tensor::zeros({count, 1, kSide, kSide}, prec);
  ds.labels.resize(count);
  size_t conv_side = kSide - kernel + 1;
  size_t pooled = conv_side / win;
  size_t total_windows = pooled * pooled;
  size_t target_tied =
      static_cast<size_t>(std::ceil(tie_fraction * static_cast<double>(total_windows)));

  std::vector<double> work(kSide * kSide);
  for (size_t i = 0; i < count; ++i) {
    ds.labels[i] = static_cast<int>(i % ds.classes);
    SplitMix64 gen(mix_seed(seed, i));
    double* img = &ds.images.data[i * kSide * kSide];

    if (tie_fraction <= 0.0) {
      // Strictly increasing ramp: no two pixels equal, no tied windows.
      double lo = gen.uniform(0.05, 0.15);
      double step = (0.9 - lo) / static_cast<double>(kSide * kSide);
      for (size_t p = 0; p < kSide * kSide; ++p)
        img[p] = round_to(lo + step * static_cast<double>(p + 1), prec);
      continue;
    }

    double base = round_to(gen.uniform(0.35, 0.7), prec);
    for (size_t p = 0; p < kSide * kSide; ++p) img[p] = base;
    if (target_tied >= total_windows) continue;  // constant image: all tied

    // Greedily un-tie windows with single-pixel bumps, never dropping the
    // tied count below the target. A bump at image pixel (win*a, win*b) is
    // inside the receptive field of conv output (win*a, win*b) only, within
    // that window, but bleeds into neighbour windows; each placement is
    // verified against the exhaustive scan and reverted on overshoot.
    size_t max_untied = total_windows - target_tied;
    std::vector<uint32_t> order;
    fill_permutation(order, total_windows, gen.next());
    auto tied_now = [&]() { return scan_plane(img, kernel, win).tied; };
    size_t current_tied = total_windows;
    for (uint32_t wi : order) {
      if (total_windows - current_tied >= max_untied) break;
      size_t a = wi / pooled, b = wi % pooled;
      size_t px = (a * win) * kSide + (b * win);
      double keep = img[px];
      double bump = base * gen.uniform(0.08, 0.35);
      img[px] = round_to(base + bump, prec);
      size_t t = tied_now();
      if (t < target_tied || img[px] == keep) {
        img[px] = keep;  // overshoot (or bump lost to rounding): revert
      } else {
        current_tied = t;
      }
    }
  }
  return ds;
}

Dataset subset_stratified(const Dataset& ds, size_t count, uint64_t seed) {
  NSAD_CHECK(count <= ds.size(), ErrorKind::Data,
             "subset of " + std::to_string(count) + " from " + std::to_string(ds.size()));
  std::vector<std::vector<size_t>> by_class(ds.classes);
  for (size_t i = 0; i < ds.size(); ++i)
    by_class[static_cast<size_t>(ds.labels[i])].push_back(i);

  size_t base = count / ds.classes, rem = count % ds.classes;
  std::vector<size_t> chosen;
  chosen.reserve(count);
  std::vector<size_t> leftovers;
  std::vector<uint32_t> perm;
  for (size_t c = 0; c < ds.classes; ++c) {
    size_t quota = base + (c < rem ? 1 : 0);
    auto& pool = by_class[c];
    fill_permutation(perm, pool.size(), mix_seed(seed, c));
    for (size_t k = 0; k < pool.size(); ++k) {
      size_t idx = pool[perm[k]];
      if (k < quota) chosen.push_back(idx);
      else leftovers.push_back(idx);
    }
  }
  // Classes that ran short are topped up from a seeded leftover pool.
  if (chosen.size() < count) {
    fill_permutation(perm, leftovers.size(), mix_seed(seed, 0xF00D));
    for (size_t k = 0; chosen.size() < count && k < leftovers.size(); ++k)
      chosen.push_back(leftovers[perm[k]]);
  }
  fill_permutation(perm, chosen.size(), mix_seed(seed, 0xD00F));

  size_t plane = ds.images.shape[1] * ds.images.shape[2] * ds.images.shape[3];
  Dataset out;
  out.classes = ds.classes;
  out.split = ds.split;
  out.images = Tensor::zeros({count, ds.images.shape[1], ds.images.shape[2], ds.images.shape[3]},
                             ds.images.prec);
  out.labels.resize(count);
  for (size_t k = 0; k < count; ++k) {
    size_t src = chosen[perm[k]];
    std::memcpy(&out.images.data[k * plane], &ds.images.data[src * plane],
                plane * sizeof(double));
    out.labels[k] = ds.labels[src];
  }
  return out;
}

Tensor slice_images(const Tensor& images, size_t start, size_t count) {
  size_t plane = images.shape[1] * images.shape[2] * images.shape[3];
  Tensor out;
  out.prec = images.prec;
  out.shape = {count, images.shape[1], images.shape[2], images.shape[3]};
  out.data.assign(images.data.begin() + static_cast<std::ptrdiff_t>(start * plane),
                  images.data.begin() + static_cast<std::ptrdiff_t>((start + count) * plane));
  return out;
}

std::vector<int> slice_labels(const std::vector<int>& labels, size_t start, size_t count) {
  return std::vector<int>(labels.begin() + static_cast<std::ptrdiff_t>(start),
                          labels.begin() + static_cast<std::ptrdiff_t>(start + count));
}

uint64_t dataset_fingerprint(const Dataset& ds) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  mix(ds.images.data.data(), ds.images.data.size() * sizeof(double));
  mix(ds.labels.data(), ds.labels.size() * sizeof(int));
  return h;
}

}  // namespace nsad
