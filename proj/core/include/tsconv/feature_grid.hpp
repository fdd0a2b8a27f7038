#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tsconv/errors.hpp"

namespace tsconv {

struct Shape {
  int w = 0;
  int h = 0;
  int f = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(f);
  }
  std::size_t cells() const { return static_cast<std::size_t>(w) * static_cast<std::size_t>(h); }
  friend bool operator==(const Shape&, const Shape&) = default;
  std::string str() const {
    return "(" + std::to_string(w) + "," + std::to_string(h) + "," + std::to_string(f) + ")";
  }
};

// Dense W x H x F array, channel-fastest: index = (y * W + x) * F + c.
class FeatureGrid {
 public:
  FeatureGrid() = default;
  explicit FeatureGrid(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
  FeatureGrid(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("FeatureGrid: buffer length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  int width() const { return shape_.w; }
  int height() const { return shape_.h; }
  int channels() const { return shape_.f; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * shape_.w + x) * shape_.f + c;
  }
  double& at(int x, int y, int c) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c) const { return data_[index(x, y, c)]; }
  double* cell(int x, int y) { return data_.data() + index(x, y, 0); }
  const double* cell(int x, int y) const { return data_.data() + index(x, y, 0); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace tsconv
