#pragma once

#include "tsase/estimation.hpp"
#include "tsase/powerflow.hpp"

#include <string>

namespace testutil {

inline std::string data_path(const std::string& name) {
    return std::string(TSASE_DATA_DIR) + "/" + name;
}

inline tsase::NetworkCase load_case(const std::string& name) {
    return tsase::parse_case(tsase::read_text_file(data_path(name)));
}

inline tsase::PmuPlacement load_placement(const tsase::NetworkCase& nc, const std::string& name) {
    return tsase::PmuPlacement::parse(nc, tsase::read_text_file(data_path(name)));
}

inline const char* kTwoBusCase = R"(baseMVA 100
bus
1 3 0 0 0 0 1 1.0 0
2 1 0 0 0 0 1 1.0 0
end
branch
1 2 0 0.1 0 1 0 1
end
gen
1 0 0 0 0 1.0 100 1
end
)";

/// 2-bus case with modest load on bus 2, for nontrivial profiles.
inline const char* kTwoBusLoaded = R"(baseMVA 100
bus
1 3 0 0 0 0 1 1.0 0
2 1 20 10 0 0 1 1.0 0
end
branch
1 2 0.01 0.1 0.02 1 0 1
end
gen
1 0 0 0 0 1.02 100 1
end
)";

} // namespace testutil
