#pragma once

#include "wdgan/tensor.hpp"
#include "wdgan/noise.hpp"
#include "wdgan/wavelet.hpp"
#include "wdgan/diffusion.hpp"
#include "wdgan/autograd.hpp"
#include "wdgan/ops.hpp"
#include "wdgan/params.hpp"
#include "wdgan/networks.hpp"
#include "wdgan/training.hpp"
#include "wdgan/image_io.hpp"
#include "wdgan/datapipe.hpp"
#include "wdgan/metrics.hpp"
#include "wdgan/config.hpp"
#include "wdgan/checkpoint.hpp"
#include "wdgan/cli.hpp"
