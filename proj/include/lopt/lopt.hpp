#pragma once

#include "lopt/core.hpp"
#include "lopt/model.hpp"
#include "lopt/ascent.hpp"
#include "lopt/landscape.hpp"
#include "lopt/infer.hpp"
#include "lopt/boot.hpp"
#include "lopt/em.hpp"
#include "lopt/modehunt.hpp"
#include "lopt/twosample.hpp"
#include "lopt/diagnostics.hpp"
#include "lopt/harness.hpp"
