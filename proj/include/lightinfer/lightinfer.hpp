// Copyright (C) 2026 The lightinfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "lightinfer/error.hpp"
#include "lightinfer/numerics.hpp"
#include "lightinfer/attention.hpp"
#include "lightinfer/merge.hpp"
#include "lightinfer/kvcache.hpp"
#include "lightinfer/model.hpp"
#include "lightinfer/oracle.hpp"
#include "lightinfer/config.hpp"
#include "lightinfer/bench.hpp"
#include "lightinfer/verify.hpp"
