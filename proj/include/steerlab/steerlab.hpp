#ifndef STEERLAB_STEERLAB_HPP
#define STEERLAB_STEERLAB_HPP

#include "steerlab/attention_lab.hpp"
#include "steerlab/concept_space.hpp"
#include "steerlab/core_lm.hpp"
#include "steerlab/correction_sim.hpp"
#include "steerlab/error.hpp"
#include "steerlab/format.hpp"
#include "steerlab/io.hpp"
#include "steerlab/numeric.hpp"
#include "steerlab/rng.hpp"
#include "steerlab/synthetic.hpp"
#include "steerlab/trace_analysis.hpp"

namespace steerlab {
inline constexpr const char* kVersion = "0.1.0";
}

#endif // STEERLAB_STEERLAB_HPP
