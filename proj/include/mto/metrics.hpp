#pragma once

#include "mto/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace mto {

struct CurveSample {
  double epoch = 0;
  double score = 0;
};

struct TrainingCurve {
  std::vector<CurveSample> samples;
  std::string method_name;

  void validate() const {
    if (samples.size() < 2) throw ArgumentError("curve '" + method_name + "' needs at least two samples");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!std::isfinite(samples[i].epoch) || !std::isfinite(samples[i].score))
        throw ArgumentError("curve '" + method_name + "' has a non-finite sample");
      if (i > 0 && !(samples[i].epoch > samples[i - 1].epoch))
        throw ArgumentError("curve '" + method_name + "' epochs must be strictly increasing");
    }
  }

  double first_epoch() const { return samples.front().epoch; }
  double last_epoch() const { return samples.back().epoch; }
};

// Piecewise-linear; exact at sample points; no extrapolation.
inline double interpolate(const TrainingCurve& curve, double epoch) {
  curve.validate();
  if (epoch < curve.first_epoch() || epoch > curve.last_epoch()) {
    std::ostringstream os;
    os << "interpolate: epoch " << epoch << " outside [" << curve.first_epoch() << ", " << curve.last_epoch() << "] of '"
       << curve.method_name << "'";
    throw RangeError(os.str());
  }
  const auto it = std::lower_bound(curve.samples.begin(), curve.samples.end(), epoch,
                                   [](const CurveSample& s, double e) { return s.epoch < e; });
  if (it->epoch == epoch) return it->score;
  const CurveSample& hi = *it;
  const CurveSample& lo = *(it - 1);
  const double t = (epoch - lo.epoch) / (hi.epoch - lo.epoch);
  return lo.score + t * (hi.score - lo.score);
}

// Relative area under the curve of s2 against baseline s1 on [e1, e2]:
//   int (S2(E) - S1(e1)) dE / int (S1(E) - S1(e1)) dE
// Both integrands are piecewise linear on the merged knot set, so the
// trapezoid rule over those knots is exact.
inline double rauc(const TrainingCurve& s1, const TrainingCurve& s2, double e1, double e2) {
  s1.validate();
  s2.validate();
  if (!(e2 > e1)) throw RangeError("rauc: need e1 < e2");
  for (const TrainingCurve* c : {&s1, &s2})
    if (e1 < c->first_epoch() || e2 > c->last_epoch()) {
      std::ostringstream os;
      os << "rauc: curve '" << c->method_name << "' does not span [" << e1 << ", " << e2 << "]";
      throw RangeError(os.str());
    }

  std::vector<double> knots{e1, e2};
  for (const TrainingCurve* c : {&s1, &s2})
    for (const auto& s : c->samples)
      if (s.epoch > e1 && s.epoch < e2) knots.push_back(s.epoch);
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());

  const double base = interpolate(s1, e1);
  double num = 0;
  double den = 0;
  for (std::size_t i = 1; i < knots.size(); ++i) {
    const double w = 0.5 * (knots[i] - knots[i - 1]);
    num += w * ((interpolate(s2, knots[i - 1]) - base) + (interpolate(s2, knots[i]) - base));
    den += w * ((interpolate(s1, knots[i - 1]) - base) + (interpolate(s1, knots[i]) - base));
  }
  if (den == 0.0) throw DegenerateBaselineError("rauc: baseline '" + s1.method_name + "' has zero area on [e1, e2]");
  return num / den;
}

// CSV with header `epoch,score`.
inline TrainingCurve read_curve_csv(const std::string& path, std::string method_name = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open curve file '" + path + "'");
  TrainingCurve curve;
  curve.method_name = method_name.empty() ? path : std::move(method_name);
  std::string line;
  if (!std::getline(in, line)) throw IoError("curve file '" + path + "' is empty");
  line.erase(std::remove_if(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\r'; }), line.end());
  if (line != "epoch,score") throw IoError("curve file '" + path + "' must start with header 'epoch,score'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::istringstream row(line);
    CurveSample s;
    char comma = 0;
    if (!(row >> s.epoch >> comma >> s.score) || comma != ',')
      throw IoError("curve file '" + path + "' line " + std::to_string(lineno) + " is malformed");
    curve.samples.push_back(s);
  }
  curve.validate();
  return curve;
}

inline void write_curve_csv(const TrainingCurve& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write curve file '" + path + "'");
  out.precision(17);
  out << "epoch,score\n";
  for (const auto& s : curve.samples) out << s.epoch << ',' << s.score << '\n';
}

}  // namespace mto
