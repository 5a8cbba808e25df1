#include "flimreg/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "flimreg/error.hpp"

namespace flimreg::metrics {

namespace {

struct Overlap {
  std::vector<double> a, b;
};

Overlap mutual_foreground(const ScalarPlane& a, const ScalarPlane& b) {
  if (!a.same_dims(b)) throw Error(ErrorCode::DimensionMismatch, "metric inputs differ in size");
  Overlap o;
  const auto va = a.values();
  const auto vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (va[i] > 0.0f && vb[i] > 0.0f) {
      o.a.push_back(va[i]);
      o.b.push_back(vb[i]);
    }
  }
  if (o.a.empty()) throw Error(ErrorCode::EmptyOverlap, "images share no foreground pixels");
  return o;
}

int bin_of(double v) { return std::clamp(static_cast<int>(v * kNmiBins / 256.0), 0, kNmiBins - 1); }

double entropy(const std::vector<double>& counts, double n) {
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  }
  return h;
}

}  // namespace

double mse(const ScalarPlane& a, const ScalarPlane& b) {
  const Overlap o = mutual_foreground(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < o.a.size(); ++i) {
    const double d = (o.a[i] - o.b[i]) / 255.0;
    s += d * d;
  }
  return s / static_cast<double>(o.a.size());
}

double nmi(const ScalarPlane& a, const ScalarPlane& b) {
  const Overlap o = mutual_foreground(a, b);
  std::vector<double> ha(kNmiBins, 0.0), hb(kNmiBins, 0.0), hab(kNmiBins * kNmiBins, 0.0);
  for (std::size_t i = 0; i < o.a.size(); ++i) {
    const int ba = bin_of(o.a[i]);
    const int bb = bin_of(o.b[i]);
    ha[static_cast<std::size_t>(ba)] += 1.0;
    hb[static_cast<std::size_t>(bb)] += 1.0;
    hab[static_cast<std::size_t>(ba * kNmiBins + bb)] += 1.0;
  }
  const double n = static_cast<double>(o.a.size());
  const double joint = entropy(hab, n);
  if (joint <= 0.0) return 2.0;
  return (entropy(ha, n) + entropy(hb, n)) / joint;
}

double ncc(const ScalarPlane& a, const ScalarPlane& b) {
  const Overlap o = mutual_foreground(a, b);
  const double n = static_cast<double>(o.a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < o.a.size(); ++i) {
    ma += o.a[i];
    mb += o.b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < o.a.size(); ++i) {
    const double da = o.a[i] - ma;
    const double db = o.b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace flimreg::metrics
