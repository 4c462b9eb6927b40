#pragma once

// Umbrella header for the ALI validation-study toolkit.

#include "alival/ali.hpp"
#include "alival/audit.hpp"
#include "alival/common.hpp"
#include "alival/csv.hpp"
#include "alival/design.hpp"
#include "alival/formats.hpp"
#include "alival/logistic.hpp"
#include "alival/rng.hpp"
#include "alival/sieve.hpp"
#include "alival/sim.hpp"
#include "alival/smle.hpp"
#include "alival/wave.hpp"
