#pragma once

#include "mbfg/errors.hpp"
#include "mbfg/mech_model.hpp"
#include "mbfg/constraint_blocks.hpp"
#include "mbfg/dynamics.hpp"
#include "mbfg/system.hpp"
#include "mbfg/factor_graph.hpp"
#include "mbfg/factors.hpp"
#include "mbfg/solver.hpp"
#include "mbfg/fixed_lag.hpp"
#include "mbfg/pipelines.hpp"
#include "mbfg/reference.hpp"
#include "mbfg/io.hpp"
#include "mbfg/jacobian_check.hpp"
