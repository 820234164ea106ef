#pragma once

#include "orchestra/rng.hpp"
#include "orchestra/matching_env.hpp"
#include "orchestra/experts.hpp"
#include "orchestra/orchestrator.hpp"
#include "orchestra/exact_eval.hpp"
#include "orchestra/tabular_learn.hpp"
#include "orchestra/neural.hpp"
#include "orchestra/harness.hpp"
