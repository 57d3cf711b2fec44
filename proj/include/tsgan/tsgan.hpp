#pragma once

#include "tsgan/adam.hpp"
#include "tsgan/checkpoint.hpp"
#include "tsgan/error.hpp"
#include "tsgan/evaluator.hpp"
#include "tsgan/features.hpp"
#include "tsgan/model.hpp"
#include "tsgan/ops.hpp"
#include "tsgan/signal_io.hpp"
#include "tsgan/tensor.hpp"
#include "tsgan/text_format.hpp"
#include "tsgan/trainer.hpp"
