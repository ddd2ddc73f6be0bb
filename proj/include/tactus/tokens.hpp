#pragma once

#include <vector>

namespace tactus {

// Token id 0 is reserved for the unconditional branch and never names a real
// style, setting, or camera.
inline constexpr int kNullToken = 0;

// Discrete caption: style/setting/camera token slots. Base-form captions use
// only the minimal template; detailed ones carry the full slot set.
struct ConditionTokens {
    std::vector<int> ids;
    bool detailed = true;
};

inline ConditionTokens null_condition() { return ConditionTokens{{kNullToken}, false}; }

}  // namespace tactus
