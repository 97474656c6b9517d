#pragma once

#include "simo/circuit.hpp"
#include "simo/config.hpp"
#include "simo/control.hpp"
#include "simo/engine.hpp"
#include "simo/harness.hpp"
#include "simo/metrics.hpp"
#include "simo/schedule.hpp"
#include "simo/simulator.hpp"
