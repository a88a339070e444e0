#ifndef DVCM_DVCM_HPP
#define DVCM_DVCM_HPP

#include "dvcm/combiner.hpp"
#include "dvcm/diagnostics.hpp"
#include "dvcm/index_point.hpp"
#include "dvcm/io.hpp"
#include "dvcm/kernels.hpp"
#include "dvcm/linalg.hpp"
#include "dvcm/model.hpp"
#include "dvcm/partitioner.hpp"
#include "dvcm/rng.hpp"
#include "dvcm/runner.hpp"
#include "dvcm/sampler.hpp"
#include "dvcm/simgen.hpp"

#endif  // DVCM_DVCM_HPP
