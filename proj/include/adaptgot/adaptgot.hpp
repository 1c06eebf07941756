#pragma once

#include "adaptgot/config.hpp"
#include "adaptgot/corpus.hpp"
#include "adaptgot/error.hpp"
#include "adaptgot/eval.hpp"
#include "adaptgot/geo.hpp"
#include "adaptgot/got_attention.hpp"
#include "adaptgot/got_repr.hpp"
#include "adaptgot/io.hpp"
#include "adaptgot/matrix.hpp"
#include "adaptgot/moe.hpp"
#include "adaptgot/optim.hpp"
#include "adaptgot/pretrain.hpp"
#include "adaptgot/rng.hpp"
#include "adaptgot/sampling.hpp"
#include "adaptgot/synth.hpp"
#include "adaptgot/tensor.hpp"
#include "adaptgot/text.hpp"
#include "adaptgot/wl_lab.hpp"
