#pragma once

#include <mrf/pipeline/commands.hpp>
#include <mrf/pipeline/config.hpp>
#include <mrf/pipeline/experiment.hpp>
