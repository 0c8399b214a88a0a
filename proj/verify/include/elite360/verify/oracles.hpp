#pragma once

// Independent reference implementations used by tests and the audit
// command. None of these call the primitives they are compared against;
// they are plain loops over std::vector / Eigen storage in double precision.

#include <Eigen/Core>

#include <vector>

#include "elite360/image.hpp"

namespace e360::oracle {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// c[i][j] = sum_p a[i][p] b[p][j], triple loop.
Mat matmul(const Mat& a, const Mat& b);

// Direct 6-loop cross-correlation with zero padding; x is [cin][h][w],
// w is [cout][cin][kh][kw] (flat row-major).
std::vector<double> conv2d(const std::vector<double>& x, Index cin, Index h, Index w,
                           const std::vector<double>& weight, Index cout, Index kh, Index kw,
                           const std::vector<double>& bias, Index stride, Index pad, Index& out_h,
                           Index& out_w);

// Bilinear sample of an explicitly padded copy of `img`: one wrapped column
// on each side, rows clamped.
Vec padded_wrap_sample(const Image<float>& img, double row, double col);

// Farthest point sampling recomputing every candidate's distance to the
// whole chosen set on each round (O(M^2 k)).
std::vector<Index> farthest_point_sample(const Eigen::MatrixX3d& points, Index k);

// k nearest indices by full sort, ties to the lower index.
std::vector<Index> knn(const Eigen::MatrixX3d& points, const Eigen::Vector3d& query, Index k);

// --- attention fusion, one pixel at a time --------------------------------

struct FusionWeights {
  Mat sq, sk, sv;       // C x d
  Mat sp;               // 3 x d
  Mat dq, dk, dv;       // C x d
  Mat gate_sa, gate_da; // 2d x d
};

// Rows are pixels (P x C); point features N x C; coords P x 3 / N x 3.
Mat semantic_attention(const Mat& fe, const Mat& fi, const FusionWeights& w);
Mat distance_attention(const Mat& fe, const Mat& fi, const Mat& erp_dirs, const Mat& coords,
                       const FusionWeights& w);
Mat gated_fusion(const Mat& fsa, const Mat& fda, const FusionWeights& w);

// --- losses and metrics ----------------------------------------------------

double berhu(double x, double c);
// Mean BerHu over valid pixels.
double depth_loss(const Mat& pred, const Mat& gt, const ValidMask& mask, double c);
// Forward-difference residuals over stencils whose two taps are valid.
double gradient_loss(const Mat& pred, const Mat& gt, const ValidMask& mask, double c);

struct Metrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, d1 = 0, d2 = 0, d3 = 0;
  Index valid = 0;
};
Metrics metrics(const Mat& pred, const Mat& gt, const ValidMask& mask, double alpha);

// --- synthetic box scene ---------------------------------------------------

// Marches from the origin with a coarse step until the point leaves the
// axis-aligned box, then walks back over the last coarse interval with
// `fine_step` to locate the exit.
double ray_march_box_depth(const Eigen::Vector3d& dir, const Eigen::Vector3d& half_extents,
                           double fine_step = 1e-5);

}  // namespace e360::oracle
