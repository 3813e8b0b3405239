#pragma once

#include <string>
#include <string_view>

#include "saecount/ebpp.hpp"
#include "saecount/gmerf.hpp"
#include "saecount/merf.hpp"

namespace saecount {

// Versioned JSON fit artifacts. Serialization is deterministic (sorted
// keys, round-trip float precision), so reload-and-save reproduces the
// bytes. Forest training data and bags are not persisted; a deserialized
// fit supports prediction and bootstrap schemes, not further OOB queries.
std::string serialize_fit(const GmerfFit& fit);
std::string serialize_fit(const MerfFit& fit);
std::string serialize_fit(const GlmmFit& fit);

GmerfFit deserialize_gmerf(std::string_view text);
MerfFit deserialize_merf(std::string_view text);
GlmmFit deserialize_glmm(std::string_view text);

// Method tag of an artifact ("gmerf" | "merf" | "ebpp").
std::string artifact_method(std::string_view text);

}  // namespace saecount
