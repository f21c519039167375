#pragma once

#include "agecurve/basis.hpp"
#include "agecurve/cluster.hpp"
#include "agecurve/curveops.hpp"
#include "agecurve/error.hpp"
#include "agecurve/fpca.hpp"
#include "agecurve/inference.hpp"
#include "agecurve/ingest.hpp"
#include "agecurve/interp.hpp"
#include "agecurve/pace.hpp"
#include "agecurve/quadrature.hpp"
#include "agecurve/random.hpp"
#include "agecurve/simulate.hpp"
#include "agecurve/smooth.hpp"
#include "agecurve/special.hpp"
