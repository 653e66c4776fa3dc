#pragma once

#include "hmmvb/csv.hpp"
#include "hmmvb/error.hpp"
#include "hmmvb/gmm.hpp"
#include "hmmvb/inference.hpp"
#include "hmmvb/mapped_gmm.hpp"
#include "hmmvb/modal.hpp"
#include "hmmvb/model.hpp"
#include "hmmvb/serialization.hpp"
#include "hmmvb/simgen.hpp"
#include "hmmvb/training.hpp"
