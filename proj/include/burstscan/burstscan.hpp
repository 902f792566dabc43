#pragma once

#include "burstscan/burst.hpp"
#include "burstscan/errors.hpp"
#include "burstscan/jump_inference.hpp"
#include "burstscan/likelihood.hpp"
#include "burstscan/model_selection.hpp"
#include "burstscan/parallel.hpp"
#include "burstscan/prox.hpp"
#include "burstscan/random.hpp"
#include "burstscan/scan_test.hpp"
#include "burstscan/segmentation.hpp"
#include "burstscan/stream.hpp"
#include "burstscan/synthetic.hpp"
