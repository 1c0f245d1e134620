#include "dnd/noise.hpp"

#include "dnd/types.hpp"

namespace dnd {

std::string to_string(NoiseLaw law) {
    switch (law) {
        case NoiseLaw::Gaussian: return "gaussian";
        case NoiseLaw::TwoPoint: return "two_point";
        case NoiseLaw::UniformSqrt3: return "uniform_sqrt3";
    }
    return "gaussian";
}

NoiseLaw parse_noise_law(const std::string& text) {
    if (text == "gaussian") return NoiseLaw::Gaussian;
    if (text == "two_point") return NoiseLaw::TwoPoint;
    if (text == "uniform_sqrt3") return NoiseLaw::UniformSqrt3;
    throw ParameterError("unknown noise law '" + text + "' (gaussian | two_point | uniform_sqrt3)");
}

}  // namespace dnd
