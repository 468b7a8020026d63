#pragma once

#include "pomp/checkpoint.hpp"
#include "pomp/classifier.hpp"
#include "pomp/dataset.hpp"
#include "pomp/demographic_encoder.hpp"
#include "pomp/evaluation.hpp"
#include "pomp/linalg.hpp"
#include "pomp/model.hpp"
#include "pomp/rng.hpp"
#include "pomp/synthetic.hpp"
#include "pomp/text_encoder.hpp"
#include "pomp/tokenizer.hpp"
#include "pomp/training.hpp"
