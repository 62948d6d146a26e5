#pragma once

#include <mrf/nn/bundle.hpp>
#include <mrf/nn/conv_ica.hpp>
#include <mrf/nn/gradcheck.hpp>
#include <mrf/nn/patches.hpp>
#include <mrf/nn/predict.hpp>
#include <mrf/nn/selection.hpp>
#include <mrf/nn/train.hpp>
