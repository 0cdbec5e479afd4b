#pragma once

#include "missbart/chain.hpp"
#include "missbart/data_model.hpp"
#include "missbart/errors.hpp"
#include "missbart/io.hpp"
#include "missbart/metrics.hpp"
#include "missbart/missbart1.hpp"
#include "missbart/missbart2.hpp"
#include "missbart/mvbart.hpp"
#include "missbart/sim.hpp"
#include "missbart/stats.hpp"
#include "missbart/tree.hpp"
