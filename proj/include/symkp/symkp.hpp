#pragma once

#include "symkp/types.hpp"
#include "symkp/geom.hpp"
#include "symkp/diff.hpp"
#include "symkp/dataio.hpp"
#include "symkp/model.hpp"
#include "symkp/losses.hpp"
#include "symkp/checkpoint.hpp"
#include "symkp/train.hpp"
#include "symkp/eval.hpp"
