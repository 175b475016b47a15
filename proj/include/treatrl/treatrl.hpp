#pragma once

#include "error.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "dataset.hpp"
#include "action_space.hpp"
#include "cca.hpp"
#include "kmeans.hpp"
#include "state_space.hpp"
#include "risk_model.hpp"
#include "reward.hpp"
#include "mdp.hpp"
#include "uncertainty.hpp"
#include "policy_eval.hpp"
#include "simulator.hpp"
#include "pipeline.hpp"
