#pragma once

// Order-1 Wasserstein distance between discrete demand distributions, the
// q-valid radius bound, ambiguity-set membership, and the model-switching
// rule that picks which trained approximator plays. Distances are computed
// over the per-minute request-count distribution only; pickup and dropoff
// distributions drift far less and are excluded on purpose.

#include <cmath>
#include <cstdlib>
#include <istream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "taxi/demand.hpp"

namespace taxi {

// Exact optimal-transport cost between two distributions over integer
// atoms with |a - b| ground cost. On the line the optimum has the closed
// form sum over x of |F_p(x) - F_r(x)|, accumulated here over the merged
// supports with gap weights. Supports may differ or be disjoint.
inline double wasserstein1(const CategoricalDistribution& p,
                           const CategoricalDistribution& r) {
  p.validate();
  r.validate();
  double fp = 0.0, fr = 0.0, total = 0.0;
  std::size_t i = 0, j = 0;
  int prev = 0;
  bool started = false;
  while (i < p.support.size() || j < r.support.size()) {
    int x;
    if (i == p.support.size()) x = r.support[j];
    else if (j == r.support.size()) x = p.support[i];
    else x = std::min(p.support[i], r.support[j]);
    if (started) total += std::abs(fp - fr) * static_cast<double>(x - prev);
    if (i < p.support.size() && p.support[i] == x) fp += p.probs[i++];
    if (j < r.support.size() && r.support[j] == x) fr += r.probs[j++];
    prev = x;
    started = true;
  }
  return total;
}

enum class RadiusLogBase { Base10, Natural };

// Radius making the ambiguity ball hold the true distribution with
// probability at least q, from X samples of a distribution on a support of
// diameter B: (B + 0.75)(L/X + 2 sqrt(L/X)) with L = -log(1 - q). The log
// base is a documented configuration switch; published figures for
// (q=0.54, X=5000, B=6) sit nearest the base-10 reading, so that is the
// default, with the natural-log value exposed for comparison.
inline double q_valid_radius(double q, long long X, double B,
                             RadiusLogBase base = RadiusLogBase::Base10) {
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("q must lie in (0,1)");
  if (X < 1) throw std::invalid_argument("sample count must be >= 1");
  if (!(B > 0.0)) throw std::invalid_argument("support diameter must be positive");
  double L = base == RadiusLogBase::Base10 ? -std::log10(1.0 - q) : -std::log(1.0 - q);
  double ratio = L / static_cast<double>(X);
  return (B + 0.75) * (ratio + 2.0 * std::sqrt(ratio));
}

// Ball of radius theta around a representative request-count distribution.
// theta defaults to the q-valid bound for the stored (q, X, B); a wider
// radius may be stored explicitly, never a narrower one.
struct AmbiguitySet {
  CategoricalDistribution reference;
  double theta = 0.0;
  double q = 0.0;
  long long X = 0;
  double B = 0.0;
  RadiusLogBase log_base = RadiusLogBase::Base10;

  void validate() const {
    reference.validate();
    double bound = q_valid_radius(q, X, B, log_base);
    if (theta < bound - 1e-12)
      throw std::invalid_argument("radius " + std::to_string(theta) +
                                  " is below the q-valid bound " +
                                  std::to_string(bound));
  }
};

inline AmbiguitySet make_ambiguity_set(CategoricalDistribution reference, double q,
                                       long long X, double B,
                                       RadiusLogBase base = RadiusLogBase::Base10) {
  AmbiguitySet set{std::move(reference), q_valid_radius(q, X, B, base), q, X, B, base};
  set.validate();
  return set;
}

// Membership is strict: the region is the open ball.
inline bool in_region(const AmbiguitySet& set, const CategoricalDistribution& current) {
  set.validate();
  return wasserstein1(current, set.reference) < set.theta;
}

struct SelectionResult {
  std::size_t index = 0;   // chosen library entry
  bool switched = false;   // true when the current demand left the active region
  double distance = 0.0;   // wasserstein1(current, chosen reference)
};

// Switching rule with hysteresis: keep the active entry while the current
// request-count distribution stays inside its region, even if another
// reference is closer. Once outside, move to the closest reference (ties by
// library order). The switch flag reports leaving the region, so a
// single-entry library can flag a switch that lands on the same entry.
inline SelectionResult select_model(std::span<const AmbiguitySet> library,
                                    std::size_t active,
                                    const CategoricalDistribution& current_eta) {
  if (library.empty()) throw std::invalid_argument("empty model library");
  if (active >= library.size()) throw std::out_of_range("active entry out of range");
  if (in_region(library[active], current_eta))
    return {active, false, wasserstein1(current_eta, library[active].reference)};

  std::size_t best = 0;
  double best_distance = wasserstein1(current_eta, library[0].reference);
  for (std::size_t i = 1; i < library.size(); ++i) {
    double d = wasserstein1(current_eta, library[i].reference);
    if (d < best_distance) {
      best_distance = d;
      best = i;
    }
  }
  return {best, true, best_distance};
}

// Model-library manifest: one entry per line, `label demand-model-file
// weights-file`, '#' comments and blank lines skipped. Paths are kept as
// written; resolution against a base directory is the caller's concern.
struct ManifestEntry {
  std::string label;
  std::string model_path;
  std::string weights_path;
};

inline std::vector<ManifestEntry> load_manifest(std::istream& in) {
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string trimmed = line.substr(line.find_first_not_of(" \t") == std::string::npos
                                          ? line.size()
                                          : line.find_first_not_of(" \t"));
    if (trimmed.empty() || trimmed[0] == '#') continue;
    std::istringstream fields(trimmed);
    ManifestEntry e;
    std::string extra;
    if (!(fields >> e.label >> e.model_path >> e.weights_path) || (fields >> extra))
      throw std::invalid_argument("manifest line " + std::to_string(line_no) +
                                  ": expected `label model-file weights-file`");
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw std::invalid_argument("manifest lists no models");
  return entries;
}

}  // namespace taxi
