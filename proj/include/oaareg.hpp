#pragma once

#include "oaareg/core.hpp"
#include "oaareg/parallel.hpp"
#include "oaareg/spatial.hpp"
#include "oaareg/attention.hpp"
#include "oaareg/coarse_match.hpp"
#include "oaareg/fine_match.hpp"
#include "oaareg/estimator.hpp"
#include "oaareg/synth.hpp"
#include "oaareg/metrics.hpp"
#include "oaareg/io.hpp"
#include "oaareg/pipeline.hpp"
