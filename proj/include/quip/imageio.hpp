// Copyright (c) the quip authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Grayscale image files: PNG (8 or 16 bit) and binary PGM (P5, maxval up
// to 65535). Samples map to [0,1] on load and are rounded back on save.

#pragma once

#include <filesystem>
#include <vector>

#include "quip/image.hpp"

namespace quip::io {

enum class BitDepth { eight = 8, sixteen = 16 };

/// Format chosen from the extension (.png, .pgm); throws IoError on a
/// read failure and FormatError on a color or malformed file.
Image read_image(const std::filesystem::path& path);
/// Values are clamped to [0,1] before rounding.
void write_image(const Image& image, const std::filesystem::path& path, BitDepth depth = BitDepth::eight);

Image read_png(const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path, BitDepth depth = BitDepth::eight);
Image read_pgm(const std::filesystem::path& path);
void write_pgm(const Image& image, const std::filesystem::path& path, BitDepth depth = BitDepth::eight);

bool is_image_path(const std::filesystem::path& path);
/// Image files directly inside `dir`, sorted by name. Throws IoError when
/// `dir` is not a directory.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace quip::io
