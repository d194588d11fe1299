#pragma once

#include "flowgp/core.hpp"
#include "flowgp/kernel.hpp"
#include "flowgp/gaussian.hpp"
#include "flowgp/fit.hpp"
#include "flowgp/schedule.hpp"
#include "flowgp/flow.hpp"
#include "flowgp/likelihoods.hpp"
#include "flowgp/guidance.hpp"
#include "flowgp/sampler.hpp"
#include "flowgp/diagnostics.hpp"
#include "flowgp/metrics.hpp"
#include "flowgp/solvers.hpp"
#include "flowgp/io.hpp"
#include "flowgp/config.hpp"
#include "flowgp/experiments.hpp"
