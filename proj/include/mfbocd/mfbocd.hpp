#pragma once

#include "mfbocd/core.hpp"
#include "mfbocd/models.hpp"
#include "mfbocd/cost.hpp"
#include "mfbocd/detector.hpp"
#include "mfbocd/policy.hpp"
#include "mfbocd/synth.hpp"
#include "mfbocd/eval.hpp"
#include "mfbocd/io.hpp"
#include "mfbocd/config.hpp"
