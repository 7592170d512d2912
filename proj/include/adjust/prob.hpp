#pragma once

#include <vector>

#include "adjust/rng.hpp"

namespace adjust {

// A probability row over the vocabulary: entries >= 0, summing to 1
// within 1e-9.
using ProbRow = std::vector<double>;

// Floor applied to the second argument of KL inside the log, keeping the
// divergence finite when the student places (near-)zero mass where the
// teacher does not.
inline constexpr double kProbFloor = 1e-12;

bool is_prob_row(const ProbRow& p, double tol = 1e-9);

// softmax(logits / temperature); temperature 0 gives a one-hot at the
// argmax (lowest index on ties). Throws on non-finite logits or negative
// temperature.
ProbRow softmax_row(const std::vector<double>& logits, double temperature);

// Temperature applied in probability space: p_v^(1/T) renormalized, the
// exact counterpart of dividing logits by T. Zero entries stay zero;
// T = 0 gives a one-hot at the argmax.
ProbRow temper_row(const ProbRow& p, double temperature);

// Nucleus truncation: keep the smallest prefix of entries, sorted by
// descending probability (ties to the lower index), whose mass reaches
// top_p; renormalize. top_p >= 1 returns the row unchanged.
ProbRow nucleus_truncate(const ProbRow& p, double top_p);

// sum_v p_v ln(p_v / max(q_v, 1e-12)), with 0 ln 0 = 0.
double kl_divergence(const ProbRow& p, const ProbRow& q);

// -sum_v p_v ln p_v with 0 ln 0 = 0.
double entropy(const ProbRow& p);

// Index of the largest entry, lowest index on exact ties.
int argmax_index(const std::vector<double>& v);

// Draws v with probability p_v. Throws on an all-zero row.
int sample_categorical(const ProbRow& p, RngStream& rng);

}  // namespace adjust
