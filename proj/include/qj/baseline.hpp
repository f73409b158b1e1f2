// Published cost models of prior private-inference systems, used to compare
// the waiting cost a queue-jumping urgent input adds to the in-queue inputs
// right behind it.  Two views exist:
//
//   - complexity_row: asymptotic magnitudes (constants dropped) for the
//     added HE work and traffic of one ReLU+convolution block, across all
//     cited systems;
//   - added_cost_row: exact per-operation counts for the systems with a
//     published quantitative row, with explicit domain guards where a
//     formula presumes C_n = floor(N / (Ci*Hi*Wi)) >= 1.
//
// Formulas are evaluated exactly as printed; out-of-domain shapes are
// reported as such rather than extrapolated.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qj/ring.hpp"

namespace qj {

enum class Scheme : uint8_t {
  cryptonets,
  minionn,
  gazelle,
  delphi,
  cryptflow2,
  cheetah,
  fit,
  nexus,
  ours,
};

Scheme parse_scheme(const std::string& name);  // case-insensitive; throws on unknown
std::string to_string(Scheme s);
const std::vector<Scheme>& all_schemes();

// Geometry the formulas consume.  C_n is the number of whole inputs one
// ciphertext can batch under input-wise packing.
struct BaselineDims {
  uint64_t Ci = 0, Hi = 0, Wi = 0;
  uint64_t Co = 0, Ho = 0, Wo = 0;
  uint64_t fh = 0;
  uint64_t N = 0;

  uint64_t cn() const { return N / (Ci * Hi * Wi); }
};
BaselineDims baseline_dims(const ConvShape& shape, uint32_t N);

// One evaluated table cell: a number, a lower bound, "not applicable", or
// "out of domain" (a division by C_n with C_n = 0).
struct CountCell {
  enum class Kind : uint8_t { na, exact, lower_bound, out_of_domain };
  Kind kind = Kind::na;
  double value = 0.0;

  static CountCell na() { return {}; }
  static CountCell exact(double v) { return {Kind::exact, v}; }
  static CountCell at_least(double v) { return {Kind::lower_bound, v}; }
  static CountCell out_of_domain() { return {Kind::out_of_domain, 0.0}; }

  bool is_number() const { return kind == Kind::exact || kind == Kind::lower_bound; }
  std::string text() const;
};

// Asymptotic added-cost magnitudes for one ReLU+Conv block (the mult column
// doubles as the addition count; rounds carry a symbolic residual for the
// sign/multiplex subprotocols).
struct ComplexityRow {
  Scheme scheme = Scheme::ours;
  CountCell rot, extr, mult, dec, cts;
  double round_base = 0.0;
  std::string round_suffix;
};
ComplexityRow complexity_row(Scheme s, const BaselineDims& d);

// Exact added-operation counts, offline and online, for the four systems
// with a published quantitative row plus this work.  `needs_mux` marks
// schemes whose ReLU needs an online multiplexing step.
struct AddedCostRow {
  Scheme scheme = Scheme::ours;
  bool needs_mux = false;
  CountCell off_enc, off_cmult, off_dec, off_add;
  CountCell on_rot, on_enc, on_cmult, on_dec, on_add, on_extr;
};
bool has_added_cost_row(Scheme s);
AddedCostRow added_cost_row(Scheme s, const BaselineDims& d);  // throws if no row

}  // namespace qj
