#pragma once

#include "rdmabox/sim_kernel.hpp"
#include "rdmabox/verbs.hpp"
#include "rdmabox/nic_model.hpp"
#include "rdmabox/session.hpp"
#include "rdmabox/admission.hpp"
#include "rdmabox/batching.hpp"
#include "rdmabox/polling.hpp"
#include "rdmabox/workload.hpp"
#include "rdmabox/scenario.hpp"
#include "rdmabox/testbed.hpp"
#include "rdmabox/harness.hpp"
#include "rdmabox/stress.hpp"
