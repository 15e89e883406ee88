#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mscaps/autodiff.hpp"

namespace mscaps {

struct MarginParams {
  double m_plus = 0.9;
  double m_minus = 0.1;
  double lambda = 0.5;
};

/// Margin loss summed over both class rows of v_o [classes, dim].
Var margin_loss(Var class_vectors, int label, const MarginParams& params = {});
double margin_loss(const Tensor& class_vectors, int label, const MarginParams& params = {});

/// Binary per-pixel decision image; 1 = changed.
struct ChangeMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  ChangeMap() = default;
  ChangeMap(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}
  std::uint8_t& at(std::size_t r, std::size_t c) { return labels[r * width + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return labels[r * width + c]; }
  bool operator==(const ChangeMap&) const = default;
};

struct MetricsReport {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t oe = 0;
  double pcc = 0.0;  // percent
  double kc = 0.0;   // percent
};

/// Counts only; changed is the positive class.
MetricsReport confusion(const ChangeMap& pred, const ChangeMap& gt);
/// Fills pcc and kc from the counts. Cohen's kappa; when expected agreement
/// is 1 the kappa is 100 for a perfect map and 0 otherwise.
void pcc_kappa(MetricsReport& report);
MetricsReport evaluate(const ChangeMap& pred, const ChangeMap& gt);

/// "fp=..\nfn=..\n..." in the order fp, fn, tp, tn, oe, pcc, kc.
std::string to_text(const MetricsReport& report);
std::string to_json(const MetricsReport& report);

}  // namespace mscaps
