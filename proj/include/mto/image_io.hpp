#pragma once

#include "mto/dataset.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

namespace mto {

// Shorter side resized to `size`, then centre-cropped to size x size. RGB order.
inline Image load_image(const std::string& path, Index size) {
  const cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image '" + path + "'");
  const double scale = static_cast<double>(size) / std::min(bgr.rows, bgr.cols);
  const int rw = std::max(static_cast<int>(size), static_cast<int>(std::lround(bgr.cols * scale)));
  const int rh = std::max(static_cast<int>(size), static_cast<int>(std::lround(bgr.rows * scale)));
  cv::Mat resized;
  cv::resize(bgr, resized, cv::Size(rw, rh), 0, 0, cv::INTER_AREA);
  const int x0 = (rw - static_cast<int>(size)) / 2;
  const int y0 = (rh - static_cast<int>(size)) / 2;
  const cv::Mat crop = resized(cv::Rect(x0, y0, static_cast<int>(size), static_cast<int>(size)));
  Image img(size, size, 3);
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      const auto& px = crop.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
      for (Index c = 0; c < 3; ++c) img.at(y, x, c) = px[static_cast<int>(2 - c)] / 255.0;
    }
  return img;
}

inline std::vector<Image> load_image_directory(const std::string& dir, Index size) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".ppm")
      files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no images found in '" + dir + "'");
  std::vector<Image> images;
  images.reserve(files.size());
  for (const auto& f : files) images.push_back(load_image(f, size));
  return images;
}

// Single-channel map in [0, 1], nearest-neighbour upscaled by `scale`.
inline void write_gray_png(const Mat<double>& m, const std::string& path, int scale = 8) {
  cv::Mat img(static_cast<int>(m.rows()) * scale, static_cast<int>(m.cols()) * scale, CV_8UC1);
  for (int y = 0; y < img.rows; ++y)
    for (int x = 0; x < img.cols; ++x)
      img.at<unsigned char>(y, x) =
          static_cast<unsigned char>(std::lround(255.0 * std::clamp(m(y / scale, x / scale), 0.0, 1.0)));
  if (!cv::imwrite(path, img)) throw IoError("cannot write '" + path + "'");
}

inline void write_rgb_png(const Image& im, const std::string& path) {
  if (im.channels != 3) throw DimensionError("write_rgb_png: need 3 channels");
  cv::Mat img(static_cast<int>(im.height), static_cast<int>(im.width), CV_8UC3);
  for (Index y = 0; y < im.height; ++y)
    for (Index x = 0; x < im.width; ++x)
      for (Index c = 0; c < 3; ++c)
        img.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x))[static_cast<int>(2 - c)] =
            static_cast<unsigned char>(std::lround(255.0 * std::clamp(im.at(y, x, c), 0.0, 1.0)));
  if (!cv::imwrite(path, img)) throw IoError("cannot write '" + path + "'");
}

}  // namespace mto
