#include "qj/baseline.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

namespace qj {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

double d(uint64_t v) { return static_cast<double>(v); }

}  // namespace

Scheme parse_scheme(const std::string& name) {
  const std::string n = lower(name);
  if (n == "cryptonets") return Scheme::cryptonets;
  if (n == "minionn") return Scheme::minionn;
  if (n == "gazelle") return Scheme::gazelle;
  if (n == "delphi") return Scheme::delphi;
  if (n == "cryptflow2") return Scheme::cryptflow2;
  if (n == "cheetah") return Scheme::cheetah;
  if (n == "fit") return Scheme::fit;
  if (n == "nexus") return Scheme::nexus;
  if (n == "ours") return Scheme::ours;
  throw std::invalid_argument("unknown scheme: " + name);
}

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::cryptonets: return "cryptonets";
    case Scheme::minionn: return "minionn";
    case Scheme::gazelle: return "gazelle";
    case Scheme::delphi: return "delphi";
    case Scheme::cryptflow2: return "cryptflow2";
    case Scheme::cheetah: return "cheetah";
    case Scheme::fit: return "fit";
    case Scheme::nexus: return "nexus";
    case Scheme::ours: return "ours";
  }
  return "?";
}

const std::vector<Scheme>& all_schemes() {
  static const std::vector<Scheme> v = {
      Scheme::cryptonets, Scheme::minionn, Scheme::gazelle,  Scheme::delphi, Scheme::cryptflow2,
      Scheme::cheetah,    Scheme::fit,     Scheme::nexus,    Scheme::ours,
  };
  return v;
}

BaselineDims baseline_dims(const ConvShape& shape, uint32_t N) {
  const auto od = out_dims(shape);
  BaselineDims dd;
  dd.Ci = shape.Ci;
  dd.Hi = shape.Hi;
  dd.Wi = shape.Wi;
  dd.Co = shape.Co;
  dd.Ho = od.Ho;
  dd.Wo = od.Wo;
  dd.fh = shape.Hf;
  dd.N = N;
  return dd;
}

std::string CountCell::text() const {
  switch (kind) {
    case Kind::na: return "-";
    case Kind::out_of_domain: return "out of domain";
    case Kind::exact:
    case Kind::lower_bound: {
      std::ostringstream o;
      o.precision(15);  // full digits; counts must never render in e-notation
      o << value;
      return kind == Kind::lower_bound ? ">=" + o.str() : o.str();
    }
  }
  return "?";
}

ComplexityRow complexity_row(Scheme s, const BaselineDims& dd) {
  const double Ci = d(dd.Ci), Hi = d(dd.Hi), Wi = d(dd.Wi);
  const double Co = d(dd.Co), Ho = d(dd.Ho), Wo = d(dd.Wo);
  const double fh2 = d(dd.fh) * d(dd.fh);
  const double N = d(dd.N);
  const std::string full = "+rd{relu-sign,mux}";
  const std::string sign_only = "+rd{relu-sign}";

  ComplexityRow r;
  r.scheme = s;
  switch (s) {
    case Scheme::cryptonets:
      r.rot = CountCell::exact(0);
      r.extr = CountCell::na();
      r.mult = CountCell::exact(Ci * Co * Ho * Wo * fh2);
      r.dec = CountCell::exact(Co * Ho * Wo);
      r.cts = CountCell::exact(Ci * Hi * Wi + Co * Ho * Wo);
      r.round_base = 1;
      r.round_suffix = full;
      break;
    case Scheme::minionn:
      r.rot = CountCell::exact(0);
      r.extr = CountCell::na();
      r.mult = CountCell::exact(Ci * Co * Ho * Wo * fh2);
      r.dec = CountCell::exact(Ci * Co * Ho * Wo * fh2 / N);
      r.cts = CountCell::exact(Ci * Co * Ho * Wo * fh2 / N);
      r.round_base = 0.5;
      r.round_suffix = full;
      break;
    case Scheme::gazelle:
    case Scheme::delphi:
    case Scheme::cryptflow2:
      r.rot = CountCell::exact(s == Scheme::cryptflow2 ? Ci * Hi * Wi * fh2 + Co
                                                       : Ci * Hi * Wi * fh2 + Ci * Co * Hi * Wi);
      r.extr = CountCell::na();
      r.mult = CountCell::exact(Ci * Co * Hi * Wi * fh2);
      r.dec = CountCell::exact(Co * Ho * Wo / N);
      r.cts = CountCell::exact((Ci * Hi * Wi + Co * Ho * Wo) / N);
      r.round_base = s == Scheme::delphi ? 0.5 : 1;
      r.round_suffix = full;
      break;
    case Scheme::cheetah:
      r.rot = CountCell::exact(0);
      r.extr = CountCell::exact(Co * Ho * Wo);
      r.mult = CountCell::exact(Ci * Co * Hi * Wi);
      r.dec = CountCell::exact(Co * Ho * Wo);
      r.cts = CountCell::exact(Ci * Hi * Wi / N + Co * Ho * Wo);
      r.round_base = 1;
      r.round_suffix = full;
      break;
    case Scheme::fit:
      r.rot = CountCell::exact(0);
      r.extr = CountCell::exact(0);
      r.mult = CountCell::exact(Ci * Co * Ho * Wo * fh2);
      r.dec = CountCell::exact(Ci * Hi * Wi / N + Co);
      r.cts = CountCell::exact(Ci * Co * Ho * Wo * fh2 / N + Co);
      r.round_base = 1;
      r.round_suffix = sign_only;
      break;
    case Scheme::nexus:
      r.rot = CountCell::exact(0);
      r.extr = CountCell::exact(0);
      r.mult = CountCell::exact(Ci * Co * fh2);
      r.dec = CountCell::exact(Co);
      r.cts = CountCell::exact(Ci * Co * fh2 / N + Co);
      r.round_base = 1;
      r.round_suffix = full;
      break;
    case Scheme::ours:
      r.rot = CountCell::exact(0);
      r.extr = CountCell::exact(0);
      r.mult = CountCell::exact(0);
      r.dec = CountCell::exact(0);
      r.cts = CountCell::exact(0);
      r.round_base = 0.5;
      r.round_suffix = "";
      break;
  }
  return r;
}

bool has_added_cost_row(Scheme s) {
  return s == Scheme::cryptflow2 || s == Scheme::cheetah || s == Scheme::fit ||
         s == Scheme::nexus || s == Scheme::ours;
}

AddedCostRow added_cost_row(Scheme s, const BaselineDims& dd) {
  if (!has_added_cost_row(s))
    throw std::invalid_argument("no exact added-cost row for scheme " + to_string(s));

  const double Ci = d(dd.Ci), Hi = d(dd.Hi), Wi = d(dd.Wi);
  const double Co = d(dd.Co), Ho = d(dd.Ho), Wo = d(dd.Wo);
  const double fh2 = d(dd.fh) * d(dd.fh);
  const double N = d(dd.N);
  const uint64_t cn = dd.cn();
  const double Cn = d(cn);
  // A formula dividing by C_n presumes at least one whole input per
  // ciphertext; otherwise the shape is outside the packing's domain.
  const auto over_cn = [&](double num) {
    return cn == 0 ? CountCell::out_of_domain() : CountCell::exact(num / Cn);
  };

  AddedCostRow r;
  r.scheme = s;
  switch (s) {
    case Scheme::cryptflow2:
      r.needs_mux = true;
      r.on_rot = cn == 0 ? CountCell::out_of_domain()
                         : CountCell::at_least((fh2 - 1) * Ci / Cn + Co - Co / Cn);
      r.on_enc = over_cn(Ci);
      r.on_cmult = over_cn(fh2 * Ci * Co);
      r.on_dec = over_cn(Co);
      r.on_add = over_cn(Ci + Co * Ci * fh2);
      break;
    case Scheme::cheetah:
      r.needs_mux = true;
      r.on_enc = CountCell::exact(Ci * Hi * Wi / N);
      r.on_cmult = CountCell::exact(Co * Ci * Hi * Wi / N);
      r.on_dec = CountCell::exact(Co * Ho * Wo);
      r.on_add = CountCell::exact(Co * Ho * Wo);
      r.on_extr = CountCell::exact(Co * Ho * Wo);
      break;
    case Scheme::fit:
      r.needs_mux = false;
      r.off_enc = over_cn(fh2 * Ci);
      r.off_cmult = over_cn(fh2 * Ci * Co);
      r.off_dec = CountCell::exact(Co);
      r.off_add = over_cn(fh2 * Ci * Co);
      r.on_cmult = over_cn(2 * Ci);
      r.on_dec = over_cn(Ci);
      r.on_add = over_cn(2 * Ci);
      break;
    case Scheme::nexus:
      r.needs_mux = true;
      r.off_enc = CountCell::exact(Co);
      r.off_cmult = CountCell::exact(fh2 * Ci * Co);
      r.off_add = CountCell::exact((fh2 * Ci - 1) * Co);
      r.on_dec = CountCell::exact(Co);
      r.on_add = CountCell::exact(2 * Co);
      break;
    case Scheme::ours:
      r.needs_mux = false;
      break;  // every cell stays "-" (zero added cost)
    default:
      break;
  }
  return r;
}

}  // namespace qj
