#pragma once

#include "mftmes/types.hpp"
#include "mftmes/math.hpp"
#include "mftmes/kernel_params.hpp"
#include "mftmes/mf_gp.hpp"
#include "mftmes/acquisition.hpp"
#include "mftmes/transfer.hpp"
#include "mftmes/wireless.hpp"
#include "mftmes/task_io.hpp"
#include "mftmes/orchestrator.hpp"
#include "mftmes/config.hpp"
#include "mftmes/results.hpp"
