#pragma once

#include "elr/errors.hpp"
#include "elr/tensor.hpp"
#include "elr/autodiff.hpp"
#include "elr/ops.hpp"
#include "elr/gradcheck.hpp"
#include "elr/models.hpp"
#include "elr/optim.hpp"
#include "elr/schedule.hpp"
#include "elr/metrics.hpp"
#include "elr/tasks.hpp"
#include "elr/theory.hpp"
#include "elr/config.hpp"
#include "elr/logging.hpp"
#include "elr/runner.hpp"
#include "elr/report.hpp"
