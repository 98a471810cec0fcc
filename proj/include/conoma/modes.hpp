#pragma once

namespace conoma {

// Transmission scheme. Noma reuses the device pairing with one layer of SIC at
// each strong device and no second-slot D2D transmission; Sdma serves every
// device directly with no SIC.
enum class Scheme { CoNoma, Noma, Sdma };

// Outer-loop phase: relaxed weighted-l1 link selection vs. hard-coded link
// selection and clustering.
enum class Phase { Relaxed, FixedSelection };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::CoNoma: return "conoma";
    case Scheme::Noma: return "noma";
    default: return "sdma";
  }
}

inline const char* to_string(Phase p) { return p == Phase::Relaxed ? "relaxed" : "fixed"; }

}  // namespace conoma
