#include "elite360/verify/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace e360::oracle {

Mat matmul(const Mat& a, const Mat& b) {
  Mat c = Mat::Zero(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.cols(); ++j) {
      double acc = 0;
      for (Index p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
      c(i, j) = acc;
    }
  return c;
}

std::vector<double> conv2d(const std::vector<double>& x, Index cin, Index h, Index w,
                           const std::vector<double>& weight, Index cout, Index kh, Index kw,
                           const std::vector<double>& bias, Index stride, Index pad, Index& out_h,
                           Index& out_w) {
  out_h = (h + 2 * pad - kh) / stride + 1;
  out_w = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(cout * out_h * out_w), 0.0);
  for (Index co = 0; co < cout; ++co)
    for (Index oi = 0; oi < out_h; ++oi)
      for (Index oj = 0; oj < out_w; ++oj) {
        double acc = bias.empty() ? 0.0 : bias[co];
        for (Index ci = 0; ci < cin; ++ci)
          for (Index ki = 0; ki < kh; ++ki)
            for (Index kj = 0; kj < kw; ++kj) {
              const Index ii = oi * stride + ki - pad;
              const Index jj = oj * stride + kj - pad;
              if (ii < 0 || jj < 0 || ii >= h || jj >= w) continue;
              acc += x[(ci * h + ii) * w + jj] * weight[((co * cin + ci) * kh + ki) * kw + kj];
            }
        y[(co * out_h + oi) * out_w + oj] = acc;
      }
  return y;
}

Vec padded_wrap_sample(const Image<float>& img, double row, double col) {
  const Index h = img.height(), w = img.width();
  // Padded grid: column q of the padded copy holds source column q - 1
  // (mod w), so source coordinate `col` sits at padded coordinate col + 1.
  Mat padded;
  Vec out(img.channels());
  for (Index c = 0; c < img.channels(); ++c) {
    padded.resize(h, w + 2);
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) padded(i, j + 1) = img(c, i, j);
      padded(i, 0) = img(c, i, w - 1);
      padded(i, w + 1) = img(c, i, 0);
    }
    double pc = col + 1.0;
    // Bring the coordinate into the padded range [0, w].
    while (pc < 0) pc += w;
    while (pc >= w + 1) pc -= w;
    const double r = std::min(std::max(row, 0.0), static_cast<double>(h - 1));
    const Index r0 = static_cast<Index>(std::floor(r));
    const Index r1 = std::min(r0 + 1, h - 1);
    const Index c0 = static_cast<Index>(std::floor(pc));
    const Index c1 = c0 + 1;
    const double fr = r - r0, fc = pc - c0;
    out[c] = (1 - fr) * ((1 - fc) * padded(r0, c0) + fc * padded(r0, c1)) +
             fr * ((1 - fc) * padded(r1, c0) + fc * padded(r1, c1));
  }
  return out;
}

std::vector<Index> farthest_point_sample(const Eigen::MatrixX3d& points, Index k) {
  std::vector<Index> chosen{0};
  std::vector<bool> taken(static_cast<std::size_t>(points.rows()), false);
  taken[0] = true;
  while (static_cast<Index>(chosen.size()) < k) {
    Index best = -1;
    double best_d = -1;
    for (Index i = 0; i < points.rows(); ++i) {
      if (taken[i]) continue;
      double nearest = std::numeric_limits<double>::infinity();
      for (Index c : chosen) nearest = std::min(nearest, (points.row(i) - points.row(c)).squaredNorm());
      if (nearest > best_d) {
        best_d = nearest;
        best = i;
      }
    }
    chosen.push_back(best);
    taken[best] = true;
  }
  return chosen;
}

std::vector<Index> knn(const Eigen::MatrixX3d& points, const Eigen::Vector3d& query, Index k) {
  std::vector<Index> idx(static_cast<std::size_t>(points.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> d(idx.size());
  for (Index i = 0; i < points.rows(); ++i) d[i] = (points.row(i).transpose() - query).squaredNorm();
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return d[a] < d[b]; });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

namespace {

Vec softmax(const Vec& s) {
  const double mx = s.maxCoeff();
  Vec e(s.size());
  for (Index i = 0; i < s.size(); ++i) e[i] = std::exp(s[i] - mx);
  return e / e.sum();
}

Vec row_times(const Mat& row_source, Index r, const Mat& w) {
  Vec out = Vec::Zero(w.cols());
  for (Index j = 0; j < w.cols(); ++j)
    for (Index p = 0; p < w.rows(); ++p) out[j] += row_source(r, p) * w(p, j);
  return out;
}

}  // namespace

Mat semantic_attention(const Mat& fe, const Mat& fi, const FusionWeights& w) {
  const Index P = fe.rows(), N = fi.rows(), d = w.sq.cols();
  Mat out(P, d);
  for (Index p = 0; p < P; ++p) {
    const Vec q = row_times(fe, p, w.sq);
    Vec score(N);
    for (Index n = 0; n < N; ++n) score[n] = q.dot(row_times(fi, n, w.sk)) / std::sqrt(static_cast<double>(d));
    const Vec a = softmax(score);
    Vec acc = Vec::Zero(d);
    for (Index n = 0; n < N; ++n) acc += a[n] * row_times(fi, n, w.sv);
    out.row(p) = acc.transpose();
  }
  return out;
}

Mat distance_attention(const Mat& fe, const Mat& fi, const Mat& erp_dirs, const Mat& coords,
                       const FusionWeights& w) {
  const Index P = fe.rows(), N = fi.rows(), d = w.dq.cols();
  Mat out(P, d);
  for (Index p = 0; p < P; ++p) {
    const Vec q = row_times(fe, p, w.dq);
    Vec score(N);
    for (Index n = 0; n < N; ++n) {
      const Vec k = row_times(fi, n, w.dk);
      double total = 0;
      for (Index c = 0; c < d; ++c) {
        double spatial = 0;
        for (Index a = 0; a < 3; ++a) spatial += std::exp(-std::abs(erp_dirs(p, a) - coords(n, a))) * w.sp(a, c);
        total += spatial + std::exp(-std::abs(q[c] - k[c]));
      }
      score[n] = total / std::sqrt(static_cast<double>(d));
    }
    const Vec a = softmax(score);
    Vec acc = Vec::Zero(d);
    for (Index n = 0; n < N; ++n) acc += a[n] * row_times(fi, n, w.dv);
    out.row(p) = acc.transpose();
  }
  return out;
}

Mat gated_fusion(const Mat& fsa, const Mat& fda, const FusionWeights& w) {
  const Index P = fsa.rows(), d = fsa.cols();
  Mat out(P, d);
  for (Index p = 0; p < P; ++p)
    for (Index c = 0; c < d; ++c) {
      double zs = 0, zd = 0;
      for (Index k = 0; k < d; ++k) {
        zs += fsa(p, k) * w.gate_sa(k, c) + fda(p, k) * w.gate_sa(d + k, c);
        zd += fsa(p, k) * w.gate_da(k, c) + fda(p, k) * w.gate_da(d + k, c);
      }
      const double gs = 1.0 / (1.0 + std::exp(-zs));
      const double gd = 1.0 / (1.0 + std::exp(-zd));
      out(p, c) = gs * fsa(p, c) + gd * fda(p, c);
    }
  return out;
}

double berhu(double x, double c) {
  const double ax = std::abs(x);
  return ax <= c ? ax : (x * x + c * c) / (2 * c);
}

double depth_loss(const Mat& pred, const Mat& gt, const ValidMask& mask, double c) {
  double total = 0;
  Index n = 0;
  for (Index i = 0; i < pred.rows(); ++i)
    for (Index j = 0; j < pred.cols(); ++j)
      if (mask(i, j)) {
        total += berhu(pred(i, j) - gt(i, j), c);
        ++n;
      }
  return total / static_cast<double>(n);
}

double gradient_loss(const Mat& pred, const Mat& gt, const ValidMask& mask, double c) {
  double hx = 0, hy = 0;
  Index nx = 0, ny = 0;
  for (Index i = 0; i < pred.rows(); ++i)
    for (Index j = 0; j < pred.cols(); ++j) {
      if (j + 1 < pred.cols() && mask(i, j) && mask(i, j + 1)) {
        hx += berhu((pred(i, j + 1) - pred(i, j)) - (gt(i, j + 1) - gt(i, j)), c);
        ++nx;
      }
      if (i + 1 < pred.rows() && mask(i, j) && mask(i + 1, j)) {
        hy += berhu((pred(i + 1, j) - pred(i, j)) - (gt(i + 1, j) - gt(i, j)), c);
        ++ny;
      }
    }
  return (nx ? hx / nx : 0.0) + (ny ? hy / ny : 0.0);
}

Metrics metrics(const Mat& pred, const Mat& gt, const ValidMask& mask, double alpha) {
  Metrics m;
  double se = 0;
  for (Index i = 0; i < pred.rows(); ++i)
    for (Index j = 0; j < pred.cols(); ++j) {
      if (!mask(i, j) || !(gt(i, j) > 0)) continue;
      const double g = gt(i, j), p = pred(i, j);
      const double diff = p - g;
      m.abs_rel += std::abs(diff) / g;
      m.sq_rel += diff * diff / g;
      se += diff * diff;
      const double ratio = std::max(p / g, g / p);
      if (ratio < alpha) m.d1 += 1;
      if (ratio < alpha * alpha) m.d2 += 1;
      if (ratio < alpha * alpha * alpha) m.d3 += 1;
      ++m.valid;
    }
  const double n = static_cast<double>(m.valid);
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(se / n);
  m.d1 /= n;
  m.d2 /= n;
  m.d3 /= n;
  return m;
}

double ray_march_box_depth(const Eigen::Vector3d& dir, const Eigen::Vector3d& half_extents, double fine_step) {
  const Eigen::Vector3d u = dir.normalized();
  auto inside = [&](double t) {
    const Eigen::Vector3d p = t * u;
    return std::abs(p.x()) <= half_extents.x() && std::abs(p.y()) <= half_extents.y() &&
           std::abs(p.z()) <= half_extents.z();
  };
  const double coarse = 1e-3;
  double t = 0;
  while (inside(t)) t += coarse;
  double s = t - coarse;
  while (inside(s)) s += fine_step;
  return s - fine_step / 2;
}

}  // namespace e360::oracle
