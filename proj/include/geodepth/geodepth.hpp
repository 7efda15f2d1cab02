#ifndef GEODEPTH_GEODEPTH_HPP
#define GEODEPTH_GEODEPTH_HPP

#include "geodepth/autodiff.hpp"
#include "geodepth/checkpoint.hpp"
#include "geodepth/config.hpp"
#include "geodepth/dataset.hpp"
#include "geodepth/errors.hpp"
#include "geodepth/experiment.hpp"
#include "geodepth/geometry.hpp"
#include "geodepth/geotag.hpp"
#include "geodepth/image_io.hpp"
#include "geodepth/metrics.hpp"
#include "geodepth/networks.hpp"
#include "geodepth/objective.hpp"
#include "geodepth/pipeline.hpp"
#include "geodepth/rng.hpp"
#include "geodepth/synthetic.hpp"
#include "geodepth/tensor.hpp"
#include "geodepth/training.hpp"
#include "geodepth/warp.hpp"

#endif  // GEODEPTH_GEODEPTH_HPP
