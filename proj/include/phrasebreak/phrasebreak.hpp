#pragma once

#include "phrasebreak/error.hpp"
#include "phrasebreak/labels.hpp"
#include "phrasebreak/textproc.hpp"
#include "phrasebreak/corpus.hpp"
#include "phrasebreak/eval.hpp"
#include "phrasebreak/neural/tensor.hpp"
#include "phrasebreak/neural/layers.hpp"
#include "phrasebreak/neural/loss.hpp"
#include "phrasebreak/neural/optim.hpp"
#include "phrasebreak/neural/gradcheck.hpp"
#include "phrasebreak/neural/archive.hpp"
#include "phrasebreak/models/config.hpp"
#include "phrasebreak/models/blstm.hpp"
#include "phrasebreak/models/encoder.hpp"
#include "phrasebreak/models/checkpoint.hpp"
#include "phrasebreak/models/phraser.hpp"
#include "phrasebreak/models/train.hpp"
#include "phrasebreak/abx/manifest.hpp"
#include "phrasebreak/abx/store.hpp"
