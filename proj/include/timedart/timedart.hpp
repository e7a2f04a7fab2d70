#ifndef TIMEDART_TIMEDART_HPP
#define TIMEDART_TIMEDART_HPP

// Umbrella header for the whole library.

#include "config.hpp"
#include "data.hpp"
#include "finetune.hpp"
#include "graph.hpp"
#include "model.hpp"
#include "oracle.hpp"
#include "patch.hpp"
#include "pretrain.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "synth.hpp"
#include "tensor.hpp"
#include "version.hpp"

#endif // TIMEDART_TIMEDART_HPP
