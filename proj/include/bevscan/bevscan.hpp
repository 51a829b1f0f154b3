#pragma once

#include "bevscan/cli/commands.hpp"
#include "bevscan/cli/run_config.hpp"
#include "bevscan/core/checkpoint.hpp"
#include "bevscan/core/conv.hpp"
#include "bevscan/core/module.hpp"
#include "bevscan/core/ops.hpp"
#include "bevscan/core/tensor.hpp"
#include "bevscan/ebc/ebc_block.hpp"
#include "bevscan/ebc/permutation.hpp"
#include "bevscan/ebc/ssm.hpp"
#include "bevscan/eval/metrics.hpp"
#include "bevscan/geometry/camera.hpp"
#include "bevscan/geometry/grid.hpp"
#include "bevscan/geometry/lift.hpp"
#include "bevscan/geometry/raster.hpp"
#include "bevscan/net/cioe.hpp"
#include "bevscan/net/decoder.hpp"
#include "bevscan/net/encoder.hpp"
#include "bevscan/net/heads.hpp"
#include "bevscan/net/model.hpp"
#include "bevscan/scene/dataset.hpp"
#include "bevscan/scene/render.hpp"
#include "bevscan/scene/scene.hpp"
#include "bevscan/train/losses.hpp"
#include "bevscan/train/optim.hpp"
#include "bevscan/train/targets.hpp"
#include "bevscan/train/trainer.hpp"
