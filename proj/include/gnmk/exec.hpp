#pragma once

namespace gnmk {

/// Selects the OpenMP kernel or its serial reference. Both produce bit-identical
/// results; the serial path is kept for testing and benchmarking.
enum class Exec { serial, parallel };

}  // namespace gnmk
