#pragma once

// Box and motion geometry shared by every stage of the tracker.
//
// Boxes are center-format (cx, cy, w, h). A motion is the per-frame delta
// between two boxes and a motion-info row is their 8-wide concatenation.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

#include "nlmot/error.hpp"

namespace nlmot {

enum class Units { normalized, pixel };

template <typename Scalar>
using Vec4 = Eigen::Matrix<Scalar, 4, 1>;

template <typename Scalar>
using Vec8 = Eigen::Matrix<Scalar, 8, 1>;

template <typename Scalar>
class BoxT {
 public:
  BoxT() : v_(Scalar(0.5), Scalar(0.5), Scalar(1), Scalar(1)) {}

  /// Throws ErrorKind::invalid_input unless w > 0, h > 0 and all finite.
  BoxT(Scalar cx, Scalar cy, Scalar w, Scalar h, Units units = Units::normalized)
      : v_(cx, cy, w, h), units_(units) {
    if (!v_.allFinite()) {
      throw Error(ErrorKind::invalid_input, "box has non-finite coordinates");
    }
    if (!(w > Scalar(0)) || !(h > Scalar(0))) {
      throw Error(ErrorKind::invalid_input, "box width and height must be positive");
    }
  }

  static BoxT from_vector(const Vec4<Scalar>& v, Units units = Units::normalized) {
    return BoxT(v[0], v[1], v[2], v[3], units);
  }

  Scalar cx() const { return v_[0]; }
  Scalar cy() const { return v_[1]; }
  Scalar w() const { return v_[2]; }
  Scalar h() const { return v_[3]; }
  Units units() const { return units_; }
  const Vec4<Scalar>& vector() const { return v_; }

  Scalar left() const { return v_[0] - v_[2] / Scalar(2); }
  Scalar top() const { return v_[1] - v_[3] / Scalar(2); }
  Scalar right() const { return v_[0] + v_[2] / Scalar(2); }
  Scalar bottom() const { return v_[1] + v_[3] / Scalar(2); }
  Scalar area() const { return v_[2] * v_[3]; }

  bool operator==(const BoxT& o) const { return v_ == o.v_ && units_ == o.units_; }

 private:
  Vec4<Scalar> v_;
  Units units_ = Units::normalized;
};

template <typename Scalar>
struct MotionT {
  Vec4<Scalar> delta = Vec4<Scalar>::Zero();

  MotionT() = default;
  explicit MotionT(const Vec4<Scalar>& d) : delta(d) {}
  MotionT(Scalar dcx, Scalar dcy, Scalar dw, Scalar dh) : delta(dcx, dcy, dw, dh) {}

  Scalar dcx() const { return delta[0]; }
  Scalar dcy() const { return delta[1]; }
  Scalar dw() const { return delta[2]; }
  Scalar dh() const { return delta[3]; }

  bool operator==(const MotionT& o) const { return delta == o.delta; }
};

/// (cx, cy, w, h, dcx, dcy, dw, dh)
template <typename Scalar>
using MotionInfoT = Vec8<Scalar>;

using BoundingBox = BoxT<double>;
using Motion = MotionT<double>;
using MotionInfo = MotionInfoT<double>;

struct Detection {
  int frame = 1;
  BoundingBox box;
  double confidence = 1.0;
};

namespace detail {
inline void require_same_units(Units a, Units b) {
  if (a != b) {
    throw Error(ErrorKind::invalid_input, "boxes use different unit modes");
  }
}
}  // namespace detail

template <typename Scalar>
MotionT<Scalar> motion_from_boxes(const BoxT<Scalar>& prev, const BoxT<Scalar>& curr) {
  detail::require_same_units(prev.units(), curr.units());
  return MotionT<Scalar>(curr.vector() - prev.vector());
}

/// Throws ErrorKind::degenerate_box when the result has non-positive extent.
template <typename Scalar>
BoxT<Scalar> apply_motion(const BoxT<Scalar>& box, const MotionT<Scalar>& m) {
  const Vec4<Scalar> v = box.vector() + m.delta;
  if (!(v[2] > Scalar(0)) || !(v[3] > Scalar(0)) || !v.allFinite()) {
    throw Error(ErrorKind::degenerate_box, "applying motion yields a non-positive box extent");
  }
  return BoxT<Scalar>::from_vector(v, box.units());
}

template <typename Scalar>
MotionInfoT<Scalar> make_motion_info(const BoxT<Scalar>& box, const MotionT<Scalar>& m) {
  MotionInfoT<Scalar> info;
  info << box.vector(), m.delta;
  return info;
}

template <typename Scalar>
Scalar iou(const BoxT<Scalar>& a, const BoxT<Scalar>& b) {
  detail::require_same_units(a.units(), b.units());
  const Scalar iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const Scalar ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (!(iw > Scalar(0)) || !(ih > Scalar(0))) return Scalar(0);
  const Scalar inter = iw * ih;
  const Scalar uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, Scalar(0), Scalar(1));
}

/// Top-left quadruple (left, top, w, h) as found in MOT files.
template <typename Scalar>
struct TlwhT {
  Scalar left, top, w, h;
};

using Tlwh = TlwhT<double>;

template <typename Scalar>
BoxT<Scalar> tlwh_to_center(const TlwhT<Scalar>& t, Units units = Units::pixel) {
  return BoxT<Scalar>(t.left + t.w / Scalar(2), t.top + t.h / Scalar(2), t.w, t.h, units);
}

template <typename Scalar>
TlwhT<Scalar> center_to_tlwh(const BoxT<Scalar>& b) {
  return {b.left(), b.top(), b.w(), b.h()};
}

/// Pixel box -> normalized box (divides x quantities by width, y by height).
template <typename Scalar>
BoxT<Scalar> normalize_box(const BoxT<Scalar>& b, Scalar width, Scalar height) {
  if (b.units() != Units::pixel) {
    throw Error(ErrorKind::invalid_input, "normalize_box expects a pixel box");
  }
  return BoxT<Scalar>(b.cx() / width, b.cy() / height, b.w() / width, b.h() / height,
                      Units::normalized);
}

template <typename Scalar>
BoxT<Scalar> denormalize_box(const BoxT<Scalar>& b, Scalar width, Scalar height) {
  if (b.units() != Units::normalized) {
    throw Error(ErrorKind::invalid_input, "denormalize_box expects a normalized box");
  }
  return BoxT<Scalar>(b.cx() * width, b.cy() * height, b.w() * width, b.h() * height,
                      Units::pixel);
}

}  // namespace nlmot
