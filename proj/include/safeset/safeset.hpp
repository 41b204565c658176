#pragma once

// Umbrella header for the safeset library: probabilistic safe-set
// computation for finite MDPs and Lyapunov-constrained safe reinforcement
// learning (tabular and small-scale actor-critic).

#include "safeset/actor_critic.hpp"
#include "safeset/envs.hpp"
#include "safeset/experiment.hpp"
#include "safeset/mdp.hpp"
#include "safeset/metrics.hpp"
#include "safeset/nn.hpp"
#include "safeset/oracle.hpp"
#include "safeset/policy_lp.hpp"
#include "safeset/replay.hpp"
#include "safeset/rng.hpp"
#include "safeset/tabular.hpp"
