#pragma once

#include "propfuse/bplp.hpp"
#include "propfuse/error.hpp"
#include "propfuse/eval.hpp"
#include "propfuse/frame.hpp"
#include "propfuse/fusion.hpp"
#include "propfuse/geometry.hpp"
#include "propfuse/labels_io.hpp"
#include "propfuse/log.hpp"
#include "propfuse/manifest.hpp"
#include "propfuse/motion.hpp"
#include "propfuse/pipeline.hpp"
#include "propfuse/similarity.hpp"
#include "propfuse/synth.hpp"
