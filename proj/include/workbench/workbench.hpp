// Umbrella header.

#pragma once

#include "workbench/backward.hpp"
#include "workbench/config.hpp"
#include "workbench/core.hpp"
#include "workbench/experiment.hpp"
#include "workbench/forward.hpp"
#include "workbench/hilbert.hpp"
#include "workbench/io.hpp"
#include "workbench/model.hpp"
#include "workbench/presets.hpp"
#include "workbench/prob_tree.hpp"
#include "workbench/regression.hpp"
#include "workbench/relations.hpp"
#include "workbench/report.hpp"
#include "workbench/second_order.hpp"
#include "workbench/value_hjb.hpp"
