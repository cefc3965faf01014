#pragma once

#include "meanflow/checkpoint.hpp"
#include "meanflow/cli.hpp"
#include "meanflow/config.hpp"
#include "meanflow/datagen.hpp"
#include "meanflow/eval.hpp"
#include "meanflow/flow.hpp"
#include "meanflow/forward.hpp"
#include "meanflow/network.hpp"
#include "meanflow/oracle.hpp"
#include "meanflow/parallel.hpp"
#include "meanflow/reverse.hpp"
#include "meanflow/rng.hpp"
#include "meanflow/tensor.hpp"
#include "meanflow/training.hpp"
