#ifndef MCADOT_MCADOT_HPP
#define MCADOT_MCADOT_HPP

/// Umbrella header pulling in the whole toolkit.

#include "augment.hpp"
#include "cli.hpp"
#include "cohort.hpp"
#include "common.hpp"
#include "evalr.hpp"
#include "nnet.hpp"
#include "phantom.hpp"
#include "preproc.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
#include "volume.hpp"

#endif
