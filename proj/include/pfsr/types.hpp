#pragma once

#include <cstdint>
#include <vector>

namespace pfsr {

// Dense item index: 1..|V| for real items, 0 for padding.
using ItemId = std::int64_t;
// Dense user index: 1..|U|.
using UserId = std::int64_t;

using ItemSequence = std::vector<ItemId>;

}  // namespace pfsr
