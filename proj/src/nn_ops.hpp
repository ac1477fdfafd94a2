#pragma once

// Internal dense-math primitives shared by the clip classifier and the
// segmentation net. All math is double precision; parameters live in flat
// arrays owned by the models.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace sslv::nn {

// y[o] += W[o*in + i] * x[i]
inline void matvec_acc(const double* w, const double* x, double* y, int out,
                       int in) {
  for (int o = 0; o < out; ++o) {
    double acc = 0.0;
    const double* row = w + static_cast<size_t>(o) * in;
    for (int i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] += acc;
  }
}

// dx[i] += W^T dy; dW[o][i] += dy[o] * x[i]
inline void matvec_backward(const double* w, const double* x, const double* dy,
                            double* dx, double* dw, int out, int in) {
  for (int o = 0; o < out; ++o) {
    const double g = dy[o];
    const double* row = w + static_cast<size_t>(o) * in;
    double* drow = dw + static_cast<size_t>(o) * in;
    for (int i = 0; i < in; ++i) {
      if (dx) dx[i] += row[i] * g;
      drow[i] += g * x[i];
    }
  }
}

inline void tanh_inplace(double* v, size_t n) {
  for (size_t i = 0; i < n; ++i) v[i] = std::tanh(v[i]);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// 3x3 same-padding convolution on channel-major planes [C, H, W].
inline void conv3x3_forward(const double* in, int c_in, int h, int w,
                            const double* weight, const double* bias,
                            double* out, int c_out) {
  const size_t plane = static_cast<size_t>(h) * w;
  for (int o = 0; o < c_out; ++o) {
    double* out_plane = out + o * plane;
    for (size_t p = 0; p < plane; ++p) out_plane[p] = bias[o];
    for (int i = 0; i < c_in; ++i) {
      const double* in_plane = in + i * plane;
      const double* k = weight + (static_cast<size_t>(o) * c_in + i) * 9;
      for (int y = 0; y < h; ++y) {
        const int y0 = y > 0 ? -1 : 0;
        const int y1 = y < h - 1 ? 1 : 0;
        for (int x = 0; x < w; ++x) {
          const int x0 = x > 0 ? -1 : 0;
          const int x1 = x < w - 1 ? 1 : 0;
          double acc = 0.0;
          for (int dy = y0; dy <= y1; ++dy) {
            const double* src = in_plane + static_cast<size_t>(y + dy) * w + x;
            const double* kr = k + (dy + 1) * 3 + 1;
            for (int dx = x0; dx <= x1; ++dx) acc += kr[dx] * src[dx];
          }
          out_plane[static_cast<size_t>(y) * w + x] += acc;
        }
      }
    }
  }
}

// Backward of conv3x3_forward. d_in may be null when input gradients are not
// needed (first layer).
inline void conv3x3_backward(const double* in, int c_in, int h, int w,
                             const double* weight, const double* d_out,
                             int c_out, double* d_in, double* d_weight,
                             double* d_bias) {
  const size_t plane = static_cast<size_t>(h) * w;
  for (int o = 0; o < c_out; ++o) {
    const double* dout_plane = d_out + o * plane;
    double db = 0.0;
    for (size_t p = 0; p < plane; ++p) db += dout_plane[p];
    d_bias[o] += db;
    for (int i = 0; i < c_in; ++i) {
      const double* in_plane = in + i * plane;
      double* din_plane = d_in ? d_in + i * plane : nullptr;
      const double* k = weight + (static_cast<size_t>(o) * c_in + i) * 9;
      double* dk = d_weight + (static_cast<size_t>(o) * c_in + i) * 9;
      for (int y = 0; y < h; ++y) {
        const int y0 = y > 0 ? -1 : 0;
        const int y1 = y < h - 1 ? 1 : 0;
        for (int x = 0; x < w; ++x) {
          const double g = dout_plane[static_cast<size_t>(y) * w + x];
          if (g == 0.0) continue;
          const int x0 = x > 0 ? -1 : 0;
          const int x1 = x < w - 1 ? 1 : 0;
          for (int dy = y0; dy <= y1; ++dy) {
            const size_t row = static_cast<size_t>(y + dy) * w + x;
            for (int dx = x0; dx <= x1; ++dx) {
              const int kidx = (dy + 1) * 3 + (dx + 1);
              dk[kidx] += g * in_plane[row + dx];
              if (din_plane) din_plane[row + dx] += g * k[kidx];
            }
          }
        }
      }
    }
  }
}

// 2x2 average pooling; h and w must be even.
inline void avgpool2_forward(const double* in, int c, int h, int w,
                             double* out) {
  const int ho = h / 2, wo = w / 2;
  for (int ch = 0; ch < c; ++ch) {
    const double* ip = in + static_cast<size_t>(ch) * h * w;
    double* op = out + static_cast<size_t>(ch) * ho * wo;
    for (int y = 0; y < ho; ++y) {
      for (int x = 0; x < wo; ++x) {
        const size_t base = static_cast<size_t>(2 * y) * w + 2 * x;
        op[static_cast<size_t>(y) * wo + x] =
            0.25 * (ip[base] + ip[base + 1] + ip[base + w] + ip[base + w + 1]);
      }
    }
  }
}

inline void avgpool2_backward(double* d_in, int c, int h, int w,
                              const double* d_out) {
  const int ho = h / 2, wo = w / 2;
  for (int ch = 0; ch < c; ++ch) {
    double* dip = d_in + static_cast<size_t>(ch) * h * w;
    const double* dop = d_out + static_cast<size_t>(ch) * ho * wo;
    for (int y = 0; y < ho; ++y) {
      for (int x = 0; x < wo; ++x) {
        const double g = 0.25 * dop[static_cast<size_t>(y) * wo + x];
        const size_t base = static_cast<size_t>(2 * y) * w + 2 * x;
        dip[base] += g;
        dip[base + 1] += g;
        dip[base + w] += g;
        dip[base + w + 1] += g;
      }
    }
  }
}

// Nearest-neighbor 2x upsampling.
inline void upsample2_forward(const double* in, int c, int h, int w,
                              double* out) {
  const int ho = h * 2, wo = w * 2;
  for (int ch = 0; ch < c; ++ch) {
    const double* ip = in + static_cast<size_t>(ch) * h * w;
    double* op = out + static_cast<size_t>(ch) * ho * wo;
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x)
        op[static_cast<size_t>(y) * wo + x] =
            ip[static_cast<size_t>(y / 2) * w + x / 2];
  }
}

inline void upsample2_backward(double* d_in, int c, int h, int w,
                               const double* d_out) {
  const int ho = h * 2, wo = w * 2;
  for (int ch = 0; ch < c; ++ch) {
    double* dip = d_in + static_cast<size_t>(ch) * h * w;
    const double* dop = d_out + static_cast<size_t>(ch) * ho * wo;
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x)
        dip[static_cast<size_t>(y / 2) * w + x / 2] +=
            dop[static_cast<size_t>(y) * wo + x];
  }
}

// Tracks offsets into the flat parameter vector.
class ParamAllocator {
 public:
  size_t alloc(size_t count) {
    const size_t offset = total_;
    total_ += count;
    return offset;
  }
  size_t total() const { return total_; }

 private:
  size_t total_ = 0;
};

}  // namespace sslv::nn
