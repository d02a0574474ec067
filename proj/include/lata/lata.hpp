#pragma once

#include "lata/error.hpp"
#include "lata/matrix.hpp"
#include "lata/core.hpp"
#include "lata/knn_graph.hpp"
#include "lata/refine.hpp"
#include "lata/failure_signals.hpp"
#include "lata/conformal.hpp"
#include "lata/metrics.hpp"
#include "lata/io.hpp"
#include "lata/config.hpp"
#include "lata/harness.hpp"
#include "lata/report.hpp"
