#pragma once

// Umbrella header.

#include "vip/config.hpp"
#include "vip/errors.hpp"
#include "vip/fit.hpp"
#include "vip/frame.hpp"
#include "vip/histogram.hpp"
#include "vip/limits.hpp"
#include "vip/physics.hpp"
#include "vip/pipeline.hpp"
#include "vip/recon.hpp"
#include "vip/rng.hpp"
#include "vip/sim.hpp"
#include "vip/spectrum.hpp"
#include "vip/stats.hpp"
#include "vip/version.hpp"
