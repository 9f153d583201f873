#pragma once

#include "riemnet/core.hpp"
#include "riemnet/manifold.hpp"
#include "riemnet/geodesic.hpp"
#include "riemnet/distance.hpp"
#include "riemnet/net.hpp"
#include "riemnet/embedding.hpp"
#include "riemnet/variation.hpp"
#include "riemnet/experiment.hpp"
