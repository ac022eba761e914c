#pragma once

namespace layerlens {

inline constexpr const char *k_artifact_version = "layerlens 0.1.0";

} // namespace layerlens
