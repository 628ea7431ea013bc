#pragma once

#include "sneak/attack.hpp"
#include "sneak/autodiff.hpp"
#include "sneak/corpus.hpp"
#include "sneak/defense.hpp"
#include "sneak/errors.hpp"
#include "sneak/extractor.hpp"
#include "sneak/finite_diff.hpp"
#include "sneak/grad_split.hpp"
#include "sneak/harness.hpp"
#include "sneak/io.hpp"
#include "sneak/matrix.hpp"
#include "sneak/model.hpp"
#include "sneak/psa.hpp"
#include "sneak/synonyms.hpp"
#include "sneak/training.hpp"
