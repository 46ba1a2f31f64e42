#pragma once

#include "viewmatch/core.hpp"
#include "viewmatch/error.hpp"
#include "viewmatch/evaluation.hpp"
#include "viewmatch/io.hpp"
#include "viewmatch/rle.hpp"
#include "viewmatch/scoring.hpp"
#include "viewmatch/similarity.hpp"
#include "viewmatch/synthbench.hpp"
