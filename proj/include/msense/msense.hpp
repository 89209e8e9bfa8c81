#pragma once

#include "msense/common.hpp"
#include "msense/landscape.hpp"
#include "msense/losses.hpp"
#include "msense/operators.hpp"
#include "msense/optimizer.hpp"
