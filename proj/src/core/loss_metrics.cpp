#include "mscaps/loss_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "mscaps/error.hpp"

namespace mscaps {

namespace {

void check_margin(const MarginParams& p) {
  require(0.0 < p.m_minus && p.m_minus < p.m_plus && p.m_plus < 1.0 && p.lambda > 0.0,
          ErrorCode::kInvalidArgument, "margin parameters need 0 < m_minus < m_plus < 1 and lambda > 0");
}

double hinge_loss(const Tensor& norms, int label, const MarginParams& p) {
  double loss = 0.0;
  for (std::size_t j = 0; j < norms.size(); ++j) {
    if (static_cast<int>(j) == label) {
      const double h = std::max(0.0, p.m_plus - norms[j]);
      loss += h * h;
    } else {
      const double h = std::max(0.0, norms[j] - p.m_minus);
      loss += p.lambda * h * h;
    }
  }
  return loss;
}

}  // namespace

Var margin_loss(Var class_vectors, int label, const MarginParams& params) {
  check_margin(params);
  require(class_vectors.shape().size() == 2, ErrorCode::kShapeMismatch, "margin_loss: expected [classes, dim]");
  require(label >= 0 && static_cast<std::size_t>(label) < class_vectors.shape()[0], ErrorCode::kInvalidArgument,
          "margin_loss: label out of range");
  Var norms = ops::row_norms(class_vectors);
  Tensor out = Tensor::scalar(hinge_loss(norms.value(), label, params));
  return norms.tape->record(std::move(out), {norms.id}, [in = norms.id, label, params](Tape& t, std::size_t self) {
    const double g = t.grad_mut(self)[0];
    const Tensor& n = t.value(in);
    auto& gn = t.grad_mut(in);
    for (std::size_t j = 0; j < n.size(); ++j) {
      if (static_cast<int>(j) == label)
        gn[j] += g * -2.0 * std::max(0.0, params.m_plus - n[j]);
      else
        gn[j] += g * 2.0 * params.lambda * std::max(0.0, n[j] - params.m_minus);
    }
  }, "margin_loss");
}

double margin_loss(const Tensor& class_vectors, int label, const MarginParams& params) {
  Tape tape;
  return margin_loss(tape.constant(class_vectors), label, params).value()[0];
}

MetricsReport confusion(const ChangeMap& pred, const ChangeMap& gt) {
  require(pred.height == gt.height && pred.width == gt.width && pred.labels.size() == gt.labels.size(),
          ErrorCode::kShapeMismatch,
          "change maps differ in size: " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
              " vs " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  MetricsReport r;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const auto p = pred.labels[i], g = gt.labels[i];
    require(p <= 1 && g <= 1, ErrorCode::kInvalidArgument, "change maps must be binary");
    if (p && g) ++r.tp;
    else if (!p && !g) ++r.tn;
    else if (p) ++r.fp;
    else ++r.fn;
  }
  r.oe = r.fp + r.fn;
  return r;
}

void pcc_kappa(MetricsReport& r) {
  const double n = static_cast<double>(r.tp + r.tn + r.fp + r.fn);
  require(n > 0.0, ErrorCode::kInvalidArgument, "metrics need at least one pixel");
  const double tp = static_cast<double>(r.tp), tn = static_cast<double>(r.tn);
  const double fp = static_cast<double>(r.fp), fn = static_cast<double>(r.fn);
  const double po = (tp + tn) / n;
  const double pe = ((tp + fp) * (tp + fn) + (tn + fn) * (tn + fp)) / (n * n);
  r.pcc = 100.0 * po;
  if (pe >= 1.0)
    r.kc = r.oe == 0 ? 100.0 : 0.0;
  else
    r.kc = 100.0 * (po - pe) / (1.0 - pe);
}

MetricsReport evaluate(const ChangeMap& pred, const ChangeMap& gt) {
  MetricsReport r = confusion(pred, gt);
  pcc_kappa(r);
  return r;
}

namespace {
std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace

std::string to_text(const MetricsReport& r) {
  std::ostringstream os;
  os << "fp=" << r.fp << "\nfn=" << r.fn << "\ntp=" << r.tp << "\ntn=" << r.tn << "\noe=" << r.oe
     << "\npcc=" << fmt_double(r.pcc) << "\nkc=" << fmt_double(r.kc) << "\n";
  return os.str();
}

std::string to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["fp"] = r.fp;
  j["fn"] = r.fn;
  j["tp"] = r.tp;
  j["tn"] = r.tn;
  j["oe"] = r.oe;
  j["pcc"] = r.pcc;
  j["kc"] = r.kc;
  return j.dump(2) + "\n";
}

}  // namespace mscaps
