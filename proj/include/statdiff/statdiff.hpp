#pragma once

#include "statdiff/datagen.hpp"
#include "statdiff/errors.hpp"
#include "statdiff/eval.hpp"
#include "statdiff/io.hpp"
#include "statdiff/kds.hpp"
#include "statdiff/kernel.hpp"
#include "statdiff/models.hpp"
#include "statdiff/parallel.hpp"
#include "statdiff/population_oracle.hpp"
#include "statdiff/scan.hpp"
#include "statdiff/simulate.hpp"
#include "statdiff/trainer.hpp"
