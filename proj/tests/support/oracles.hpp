// Independent reference implementations used by the tests. Nothing here
// calls into the library's numeric code; inputs and outputs are plain
// nested loops over std::vector<double>.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace oracle {

// input [h][w][ci] row-major, kernel [k][k][ci][co], zero padding `pad`.
inline std::vector<double> conv2d(const std::vector<double>& in, std::size_t h, std::size_t w, std::size_t ci,
                                  const std::vector<double>& ker, std::size_t k, std::size_t co,
                                  const std::vector<double>& bias, std::size_t dil, long pad, std::size_t& oh,
                                  std::size_t& ow) {
  const long span = static_cast<long>(dil * (k - 1));
  oh = static_cast<std::size_t>(static_cast<long>(h) + 2 * pad - span);
  ow = static_cast<std::size_t>(static_cast<long>(w) + 2 * pad - span);
  std::vector<double> out(oh * ow * co, 0.0);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t o = 0; o < co; ++o) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long iy = static_cast<long>(y) - pad + static_cast<long>(ky * dil);
            const long ix = static_cast<long>(x) - pad + static_cast<long>(kx * dil);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
            for (std::size_t c = 0; c < ci; ++c)
              acc += in[(static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * ci + c] *
                     ker[((ky * k + kx) * ci + c) * co + o];
          }
        out[(y * ow + x) * co + o] = acc;
      }
  return out;
}

inline std::vector<double> squash(const std::vector<double>& s) {
  double n2 = 0.0;
  for (double v : s) n2 += v * v;
  const double n = std::sqrt(n2);
  std::vector<double> out(s.size(), 0.0);
  if (n == 0.0) return out;
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = n2 / (1.0 + n2) * s[i] / (n + 1e-9);
  return out;
}

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct Counts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
  double pcc = 0.0, kc = 0.0;
};

// Pixel loop with kappa from the observed/expected agreement definition.
inline Counts metrics(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && gt[i]) ++c.tp;
    else if (!pred[i] && !gt[i]) ++c.tn;
    else if (pred[i]) ++c.fp;
    else ++c.fn;
  }
  const double n = static_cast<double>(pred.size());
  double pred_pos = 0, gt_pos = 0, agree = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred_pos += pred[i];
    gt_pos += gt[i];
    agree += pred[i] == gt[i];
  }
  const double po = agree / n;
  const double pe = (pred_pos * gt_pos + (n - pred_pos) * (n - gt_pos)) / (n * n);
  c.pcc = 100.0 * po;
  if (pe == 1.0) c.kc = po == 1.0 ? 100.0 : 0.0;
  else c.kc = 100.0 * (po - pe) / (1.0 - pe);
  return c;
}

}  // namespace oracle
