#pragma once

#include "ocean/error.hpp"
#include "ocean/tensor.hpp"
#include "ocean/kernels.hpp"
#include "ocean/autodiff.hpp"
#include "ocean/ops.hpp"
#include "ocean/gradcheck.hpp"
#include "ocean/geometry.hpp"
#include "ocean/labels.hpp"
#include "ocean/align.hpp"
#include "ocean/network.hpp"
#include "ocean/losses.hpp"
#include "ocean/image.hpp"
#include "ocean/tracker.hpp"
#include "ocean/synthetic.hpp"
#include "ocean/sequence_io.hpp"
#include "ocean/metrics.hpp"
#include "ocean/train.hpp"
#include "ocean/weights_io.hpp"
#include "ocean/config.hpp"
#include "ocean/gradcheck_suite.hpp"
