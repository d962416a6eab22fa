#pragma once

#include "dge/backbone.hpp"
#include "dge/blocks.hpp"
#include "dge/config.hpp"
#include "dge/ema.hpp"
#include "dge/errors.hpp"
#include "dge/flops.hpp"
#include "dge/head.hpp"
#include "dge/image.hpp"
#include "dge/model.hpp"
#include "dge/neck.hpp"
#include "dge/ops.hpp"
#include "dge/parallel.hpp"
#include "dge/params.hpp"
#include "dge/rng.hpp"
#include "dge/stats.hpp"
#include "dge/tape.hpp"
#include "dge/tensor.hpp"
#include "dge/weights.hpp"
