#pragma once

// Versioned text format for fitted models.
//
//   shapesos-model 1
//   vars <n>  degree <d>  r <r>  gram_kind <psd|dd|sdd>  train_sse <x>
//   lower / upper / center / half_width <n reals>
//   shape <none|convex|bounded|band|partial>, then K / band / block lines
//   provenance key value lines, "extra <key>\t<value>"
//   poly <n> <basis degree> <count>, then "<e_1 .. e_n>\t<coef>" per nonzero
//   certificates <count>, each with its target, Gram blocks and multipliers
//   end
//
// Reals are written with 17 significant digits, so a round trip is exact.

#include <filesystem>
#include <iosfwd>

#include "shapesos/estimators.hpp"

namespace shapesos::io {

inline constexpr int kModelFormatVersion = 1;

void write_model(std::ostream& os, const est::FittedModel& model, bool with_certificates = true);
void save_model(const std::filesystem::path& path, const est::FittedModel& model, bool with_certificates = true);

// Throws ValidationError on malformed or newer-version files.
est::FittedModel read_model(std::istream& is);
est::FittedModel load_model(const std::filesystem::path& path);

void write_polynomial(std::ostream& os, const poly::Polynomial& p);
poly::Polynomial read_polynomial(std::istream& is);

}  // namespace shapesos::io
