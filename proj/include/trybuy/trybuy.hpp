#pragma once

#include "trybuy/core_data.hpp"
#include "trybuy/dwell_pipeline.hpp"
#include "trybuy/feature_space.hpp"
#include "trybuy/quadrature.hpp"
#include "trybuy/reference_values.hpp"
#include "trybuy/regression.hpp"
#include "trybuy/simulator.hpp"
