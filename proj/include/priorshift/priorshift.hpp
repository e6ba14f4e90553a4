#pragma once

#include "basis.hpp"
#include "classifiers.hpp"
#include "cross_validation.hpp"
#include "dataset.hpp"
#include "em.hpp"
#include "error.hpp"
#include "estimators.hpp"
#include "generators.hpp"
#include "harness.hpp"
#include "kde.hpp"
#include "kl_dr.hpp"
#include "klr.hpp"
#include "lbfgs.hpp"
#include "mixture.hpp"
#include "pe_dr.hpp"
#include "simplex.hpp"
#include "simplex_vector.hpp"
