#pragma once

// Everything except manifest.hpp, which additionally needs libcrypto.

#include "horokit/errors.hpp"
#include "horokit/core.hpp"
#include "horokit/integrator.hpp"
#include "horokit/action.hpp"
#include "horokit/oracles.hpp"
#include "horokit/asymptotics.hpp"
#include "horokit/jm_metric.hpp"
#include "horokit/horofn.hpp"
#include "horokit/io.hpp"
