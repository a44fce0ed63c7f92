#pragma once

#include "qanet/augment/http_translator.hpp"
#include "qanet/augment/paraphrase.hpp"
#include "qanet/augment/sampler.hpp"
#include "qanet/augment/sentences.hpp"
#include "qanet/augment/similarity.hpp"
#include "qanet/augment/translator.hpp"
#include "qanet/checkpoint.hpp"
#include "qanet/config.hpp"
#include "qanet/cq_attention.hpp"
#include "qanet/data.hpp"
#include "qanet/embedding.hpp"
#include "qanet/encoder.hpp"
#include "qanet/error.hpp"
#include "qanet/evaluation.hpp"
#include "qanet/model.hpp"
#include "qanet/optim.hpp"
#include "qanet/parameters.hpp"
#include "qanet/random.hpp"
#include "qanet/span_output.hpp"
#include "qanet/synthetic.hpp"
#include "qanet/tensor.hpp"
#include "qanet/text.hpp"
#include "qanet/trainer.hpp"
