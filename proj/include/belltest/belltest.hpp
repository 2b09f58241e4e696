#pragma once

#include "belltest/coincidence.hpp"
#include "belltest/counts.hpp"
#include "belltest/dataset.hpp"
#include "belltest/efficiency.hpp"
#include "belltest/errors.hpp"
#include "belltest/rng.hpp"
#include "belltest/sim.hpp"
#include "belltest/stats.hpp"
