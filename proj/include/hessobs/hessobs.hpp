#pragma once

#include "hessobs/errors.hpp"
#include "hessobs/random.hpp"
#include "hessobs/cone_calculus.hpp"
#include "hessobs/chart_geometry.hpp"
#include "hessobs/penalized_operator.hpp"
#include "hessobs/newton_continuation.hpp"
#include "hessobs/estimate_monitors.hpp"
#include "hessobs/expression.hpp"
#include "hessobs/config.hpp"
#include "hessobs/report.hpp"
#include "hessobs/commands.hpp"
