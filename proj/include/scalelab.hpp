#pragma once

#include "scalelab/collectives.hpp"
#include "scalelab/conv3d.hpp"
#include "scalelab/deploykit.hpp"
#include "scalelab/error.hpp"
#include "scalelab/harness.hpp"
#include "scalelab/kvconfig.hpp"
#include "scalelab/model.hpp"
#include "scalelab/report.hpp"
#include "scalelab/ring_schedule.hpp"
#include "scalelab/synthetic.hpp"
#include "scalelab/tcp_transport.hpp"
#include "scalelab/tensor.hpp"
#include "scalelab/topo.hpp"
