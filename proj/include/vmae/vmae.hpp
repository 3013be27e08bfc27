#pragma once

// Everything at once.

#include "vmae/autograd.hpp"
#include "vmae/backbone.hpp"
#include "vmae/checkpoint.hpp"
#include "vmae/config.hpp"
#include "vmae/error.hpp"
#include "vmae/geometry.hpp"
#include "vmae/gradcheck.hpp"
#include "vmae/image.hpp"
#include "vmae/losses.hpp"
#include "vmae/manifest.hpp"
#include "vmae/masking.hpp"
#include "vmae/metrics.hpp"
#include "vmae/optimizer.hpp"
#include "vmae/plot.hpp"
#include "vmae/rng.hpp"
#include "vmae/synth.hpp"
#include "vmae/teachers.hpp"
#include "vmae/textgen.hpp"
#include "vmae/trainer.hpp"
