#pragma once

#include <mrf/ad/adam.hpp>
#include <mrf/ad/gradcheck.hpp>
#include <mrf/ad/parameters.hpp>
#include <mrf/ad/tape.hpp>
#include <mrf/ad/tensor.hpp>
