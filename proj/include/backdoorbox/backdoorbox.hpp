#pragma once

#include "backdoorbox/attack.hpp"
#include "backdoorbox/dataset.hpp"
#include "backdoorbox/defense/cutmix.hpp"
#include "backdoorbox/defense/repair.hpp"
#include "backdoorbox/defense/shrinkpad.hpp"
#include "backdoorbox/defense/spectral.hpp"
#include "backdoorbox/error.hpp"
#include "backdoorbox/experiment.hpp"
#include "backdoorbox/image.hpp"
#include "backdoorbox/metrics.hpp"
#include "backdoorbox/netpbm.hpp"
#include "backdoorbox/nn/checkpoint.hpp"
#include "backdoorbox/nn/layers.hpp"
#include "backdoorbox/nn/model.hpp"
#include "backdoorbox/nn/optimizer.hpp"
#include "backdoorbox/nn/tensor.hpp"
#include "backdoorbox/poison.hpp"
#include "backdoorbox/rng.hpp"
#include "backdoorbox/sampling.hpp"
#include "backdoorbox/schedule.hpp"
#include "backdoorbox/synthetic.hpp"
#include "backdoorbox/trainer.hpp"
#include "backdoorbox/transforms.hpp"
#include "backdoorbox/warp.hpp"
