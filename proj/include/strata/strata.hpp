#pragma once

#include "strata/binscan.hpp"
#include "strata/campaign_io.hpp"
#include "strata/classifier.hpp"
#include "strata/core.hpp"
#include "strata/manifest.hpp"
#include "strata/mappings.hpp"
#include "strata/monitor.hpp"
#include "strata/probes.hpp"
#include "strata/simulator.hpp"
#include "strata/template_io.hpp"
#include "strata/templater.hpp"
#include "strata/trace.hpp"
