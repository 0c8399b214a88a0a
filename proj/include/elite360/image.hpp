#pragma once

#include <Eigen/Core>

#include <vector>

#include "elite360/errors.hpp"
#include "elite360/tensor.hpp"

namespace e360 {

// Planar (channel-major) H x W image. ERP panoramas additionally satisfy
// W == 2H; see require_erp().
template <typename Scalar>
class Image {
 public:
  using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Image() = default;
  Image(Index channels, Index height, Index width, Scalar fill = Scalar(0))
      : channels_(channels), height_(height), width_(width) {
    if (channels < 1 || height < 1 || width < 1) throw UsageError("image dimensions must be >= 1");
    data_.assign(static_cast<std::size_t>(channels * height * width), fill);
  }

  Index channels() const { return channels_; }
  Index height() const { return height_; }
  Index width() const { return width_; }
  bool empty() const { return data_.empty(); }
  bool is_erp() const { return width_ == 2 * height_; }

  Scalar& operator()(Index c, Index i, Index j) { return data_[index(c, i, j)]; }
  Scalar operator()(Index c, Index i, Index j) const { return data_[index(c, i, j)]; }

  Eigen::Map<Plane> plane(Index c) {
    return Eigen::Map<Plane>(data_.data() + c * height_ * width_, height_, width_);
  }
  Eigen::Map<const Plane> plane(Index c) const {
    return Eigen::Map<const Plane>(data_.data() + c * height_ * width_, height_, width_);
  }

  const std::vector<Scalar>& data() const { return data_; }
  std::vector<Scalar>& data() { return data_; }

  // [C, H, W] constant tensor sharing the planar layout.
  template <typename T = Scalar>
  Tensor<T> to_tensor() const {
    return Tensor<T>::from_vector({channels_, height_, width_}, std::vector<T>(data_.begin(), data_.end()));
  }

  static Image from_tensor(const Tensor<Scalar>& t) {
    if (t.rank() == 2) {
      Image img(1, t.dim(0), t.dim(1));
      std::copy(t.values().begin(), t.values().end(), img.data_.begin());
      return img;
    }
    if (t.rank() != 3) throw DimensionError("image tensors must be [C,H,W] or [H,W]");
    Image img(t.dim(0), t.dim(1), t.dim(2));
    std::copy(t.values().begin(), t.values().end(), img.data_.begin());
    return img;
  }

 private:
  std::size_t index(Index c, Index i, Index j) const {
    return static_cast<std::size_t>((c * height_ + i) * width_ + j);
  }

  Index channels_ = 0, height_ = 0, width_ = 0;
  std::vector<Scalar> data_;
};

using ImageF = Image<float>;
using ValidMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
void require_erp(const Image<Scalar>& img) {
  if (img.empty() || !img.is_erp())
    throw UsageError("ERP image must satisfy W == 2H, got " + std::to_string(img.height()) + "x" +
                     std::to_string(img.width()));
}

}  // namespace e360
