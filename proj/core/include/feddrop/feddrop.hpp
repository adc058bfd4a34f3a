#pragma once

#include "feddrop/analysis.hpp"
#include "feddrop/checkpoint.hpp"
#include "feddrop/data.hpp"
#include "feddrop/errors.hpp"
#include "feddrop/fedsim.hpp"
#include "feddrop/mapping.hpp"
#include "feddrop/nn.hpp"
#include "feddrop/parallel.hpp"
#include "feddrop/random.hpp"
#include "feddrop/standard_task.hpp"
