// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vclip/autodiff.hpp"
#include "vclip/clip_aggregate.hpp"
#include "vclip/error.hpp"
#include "vclip/featurestore.hpp"
#include "vclip/harness.hpp"
#include "vclip/io.hpp"
#include "vclip/lta_model.hpp"
#include "vclip/metrics.hpp"
#include "vclip/synthdata.hpp"
#include "vclip/taxonomy.hpp"
#include "vclip/tensor.hpp"
