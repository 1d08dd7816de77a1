#pragma once

#include "gsot/types.hpp"
#include "gsot/forward_model.hpp"
#include "gsot/water_filling.hpp"
#include "gsot/solver.hpp"
#include "gsot/mvdr.hpp"
#include "gsot/scenario.hpp"
#include "gsot/config.hpp"
#include "gsot/io.hpp"
#include "gsot/ingest.hpp"
