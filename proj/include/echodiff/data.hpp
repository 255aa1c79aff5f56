// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "echodiff/tensor.hpp"

namespace echodiff {

/// Single-channel intensity grid in [-1, 1]. All pipeline images are exact
/// images of 8-bit display values (v = byte / 127.5 - 1), which keeps the
/// on-disk round trip lossless.
struct Image {
    int h = 0;
    int w = 0;
    std::vector<float> pix;
};

/// Anatomical class map: background = 0, LV = 1, MYO = 2, LA = 3.
struct Mask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> codes;
};

constexpr std::uint8_t kClassBackground = 0;
constexpr std::uint8_t kClassLV = 1;
constexpr std::uint8_t kClassMYO = 2;
constexpr std::uint8_t kClassLA = 3;

/// Display gray level for a mask class (Fig-style rendering: LV white,
/// MYO light gray, LA dark gray, background black).
std::uint8_t mask_gray_level(std::uint8_t class_code);

/// Image <-> display-byte value maps.
inline float byte_to_unit(std::uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }
std::uint8_t unit_to_byte(float v);

struct GuidedSample {
    std::string id;
    Image image;
    Mask mask;
    std::string domain_tag;
};

struct Dataset {
    std::string domain_tag;
    std::string provenance;
    std::vector<GuidedSample> samples;
};

/// Gray-level guide encoding of a class map, as a [-1, 1] image; rejects
/// unknown class codes. Inverse of decode_mask_gray on valid masks.
Image encode_mask_gray(const Mask& mask);

/// Nearest-level decoding of a gray guide image back to class codes.
Mask decode_mask_gray(const Image& guide);

/// Bilinear resize for intensity images (half-pixel centers; identity when
/// the size already matches).
Image resize(const Image& img, int side);

/// Nearest-neighbor resize for class maps; output holds only input codes.
Mask resize(const Mask& mask, int side);

/// Seeded shuffle then partition; first part receives round(fraction * n)
/// samples. Rejects empty parts.
std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction, std::uint64_t seed);

/// Dataset directory layout: manifest.tsv + images/<id>.pgm + masks/<id>.pgm.
/// Manifest line grammar: id <TAB> image-path <TAB> mask-path <TAB> domain.
Dataset load_dataset(const std::filesystem::path& root);
void write_dataset(const Dataset& ds, const std::filesystem::path& root);

std::vector<std::string> phantom_styles();

/// Seeded synthetic echocardiography-like dataset: a sector cone of
/// speckled tissue with dark LV/LA chambers separated by a bright MYO band,
/// plus the exactly matching class map. Styles differ in cone aperture,
/// contrast, and speckle grain.
Dataset generate_phantoms(int n, int side, const std::string& style, std::uint64_t seed);

/// Tensor views used by training and inference.
Tensor<float> image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor<float>& t);
Tensor<float> guide_to_tensor(const Mask& mask, bool onehot);

/// 8-bit binary PGM (P5) reader/writer used for all raster files.
void write_pgm(const std::filesystem::path& path, int w, int h, const std::vector<std::uint8_t>& bytes);
void read_pgm(const std::filesystem::path& path, int& w, int& h, std::vector<std::uint8_t>& bytes);

}  // namespace echodiff
