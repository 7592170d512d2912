#include "adjust/prob.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace adjust {

bool is_prob_row(const ProbRow& p, double tol) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) return false;
    s += v;
  }
  return std::abs(s - 1.0) <= tol;
}

int argmax_index(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("argmax_index: empty vector");
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

ProbRow softmax_row(const std::vector<double>& logits, double temperature) {
  if (logits.empty()) throw std::invalid_argument("softmax_row: empty logits");
  for (double v : logits)
    if (!std::isfinite(v)) throw std::invalid_argument("softmax_row: non-finite logit");
  if (temperature < 0.0) throw std::invalid_argument("softmax_row: negative temperature");

  ProbRow out(logits.size(), 0.0);
  if (temperature == 0.0) {
    out[argmax_index(logits)] = 1.0;
    return out;
  }
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / temperature);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

ProbRow temper_row(const ProbRow& p, double temperature) {
  if (temperature < 0.0) throw std::invalid_argument("temper_row: negative temperature");
  ProbRow out(p.size(), 0.0);
  if (temperature == 0.0) {
    out[argmax_index(p)] = 1.0;
    return out;
  }
  if (temperature == 1.0) return p;
  double mx = 0.0;
  for (double v : p) mx = std::max(mx, v);
  if (mx <= 0.0) throw std::invalid_argument("temper_row: all-zero row");
  double z = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    out[i] = p[i] > 0.0 ? std::exp(std::log(p[i] / mx) / temperature) : 0.0;
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

ProbRow nucleus_truncate(const ProbRow& p, double top_p) {
  if (!(top_p > 0.0)) throw std::invalid_argument("nucleus_truncate: top_p must be positive");
  if (top_p >= 1.0) return p;
  std::vector<int> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p[a] > p[b]; });
  ProbRow out(p.size(), 0.0);
  double kept = 0.0;
  for (int idx : order) {
    out[idx] = p[idx];
    kept += p[idx];
    if (kept >= top_p) break;
  }
  if (kept <= 0.0) throw std::invalid_argument("nucleus_truncate: all-zero row");
  for (double& v : out) v /= kept;
  return out;
}

double kl_divergence(const ProbRow& p, const ProbRow& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: shape mismatch");
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], kProbFloor));
  }
  // Sub-floor entries of p can contribute rounding-level negatives.
  return std::max(kl, 0.0);
}

double entropy(const ProbRow& p) {
  double h = 0.0;
  for (double v : p) {
    if (v <= 0.0) continue;
    h -= v * std::log(v);
  }
  return h;
}

int sample_categorical(const ProbRow& p, RngStream& rng) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument("sample_categorical: negative probability");
    total += v;
  }
  if (total <= 0.0) throw std::invalid_argument("sample_categorical: all-zero row");
  double u = rng.next_double() * total;
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Guard against accumulated rounding at u ~ total.
  for (size_t i = p.size(); i-- > 0;)
    if (p[i] > 0.0) return static_cast<int>(i);
  throw std::logic_error("sample_categorical: unreachable");
}

}  // namespace adjust
