#pragma once

#include "cm2net/autodiff.hpp"
#include "cm2net/config.hpp"
#include "cm2net/container.hpp"
#include "cm2net/error.hpp"
#include "cm2net/evaluation.hpp"
#include "cm2net/grad_check.hpp"
#include "cm2net/gradcheck_suite.hpp"
#include "cm2net/losses.hpp"
#include "cm2net/model.hpp"
#include "cm2net/optim.hpp"
#include "cm2net/persistence.hpp"
#include "cm2net/rng.hpp"
#include "cm2net/synthetic.hpp"
#include "cm2net/tensor.hpp"
#include "cm2net/trainer.hpp"
