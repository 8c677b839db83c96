#pragma once

#include "vxc/ablation.hpp"
#include "vxc/config.hpp"
#include "vxc/cortexsim.hpp"
#include "vxc/eval.hpp"
#include "vxc/io.hpp"
#include "vxc/nets.hpp"
#include "vxc/objectives.hpp"
#include "vxc/ops.hpp"
#include "vxc/optim.hpp"
#include "vxc/rng.hpp"
#include "vxc/tensor.hpp"
#include "vxc/trainer.hpp"
