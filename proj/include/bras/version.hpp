#pragma once

namespace bras {

/// Artifact version stamped into every output file header block.
inline constexpr const char* artifact_version = "0.1.0";

/// Identity of the pseudo-random machinery, pinned so that traces are
/// reproducible and auditable. Engine: std::mt19937_64 (bit-specified by the
/// C++ standard). Uniform doubles: (x >> 11) * 2^-53. Gaussians: Box-Muller
/// on those uniforms. Bounded integers: rejection sampling.
inline constexpr const char* prng_identity = "mt19937_64/canonical53/boxmuller";

}  // namespace bras
