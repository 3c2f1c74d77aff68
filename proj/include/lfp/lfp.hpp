#pragma once

#include "lfp/common.hpp"
#include "lfp/config.hpp"
#include "lfp/double_edge.hpp"
#include "lfp/fusion.hpp"
#include "lfp/geometry.hpp"
#include "lfp/gradcheck.hpp"
#include "lfp/heads.hpp"
#include "lfp/io.hpp"
#include "lfp/losses.hpp"
#include "lfp/nn.hpp"
#include "lfp/pillar.hpp"
#include "lfp/pipeline.hpp"
#include "lfp/plot.hpp"
#include "lfp/scene.hpp"
#include "lfp/sim.hpp"
