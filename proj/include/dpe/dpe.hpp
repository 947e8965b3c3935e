#ifndef DPE_DPE_HPP
#define DPE_DPE_HPP

#include "dpe/core.hpp"
#include "dpe/stream_io.hpp"
#include "dpe/proto_store.hpp"
#include "dpe/inference.hpp"
#include "dpe/residual_opt.hpp"
#include "dpe/engine.hpp"
#include "dpe/config_io.hpp"
#include "dpe/digest.hpp"
#include "dpe/harness.hpp"
#include "dpe/gradcheck.hpp"
#include "dpe/plot.hpp"

#endif  // DPE_DPE_HPP
