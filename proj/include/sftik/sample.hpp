#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "sftik/errors.hpp"
#include "sftik/tensor.hpp"

namespace sftik {

enum class Terrain { LW, RA, RD, SA, SD };
enum class Side { left, right };

inline constexpr std::array<Terrain, 5> kTerrains = {Terrain::LW, Terrain::RA, Terrain::RD, Terrain::SA,
                                                     Terrain::SD};

inline const char* to_string(Terrain t) {
    switch (t) {
        case Terrain::LW: return "LW";
        case Terrain::RA: return "RA";
        case Terrain::RD: return "RD";
        case Terrain::SA: return "SA";
        case Terrain::SD: return "SD";
    }
    return "LW";
}

inline Terrain terrain_from_string(const std::string& s) {
    for (Terrain t : kTerrains) {
        if (s == to_string(t)) return t;
    }
    throw FormatError("unknown terrain label '" + s + "' (expected LW|RA|RD|SA|SD)");
}

inline const char* to_string(Side s) { return s == Side::left ? "left" : "right"; }

inline Side side_from_string(const std::string& s) {
    if (s == "left") return Side::left;
    if (s == "right") return Side::right;
    throw FormatError("unknown side '" + s + "' (expected left|right)");
}

// One gait cycle paired with its terrain context: kinematics of the previous
// stride, the two key-frame depth images, and the target thigh-angle series
// of the stride being forecast.
struct StrideSample {
    Tensor<float> K;       // 19 x 100
    Tensor<float> I_prev;  // 1 x 224 x 224
    Tensor<float> I_cur;   // 1 x 224 x 224
    Tensor<float> A;       // 100
    Terrain terrain = Terrain::LW;       // key-frame label for the forecast stride
    Terrain prev_terrain = Terrain::LW;  // key-frame label for the preceding stride
    int subject = 0;
    Side side = Side::left;
    int64_t stride_id = 0;  // index of the forecast stride in its recording
};

}  // namespace sftik
