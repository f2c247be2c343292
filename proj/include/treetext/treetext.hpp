#pragma once

#include "treetext/boost.hpp"
#include "treetext/ces.hpp"
#include "treetext/common.hpp"
#include "treetext/embed.hpp"
#include "treetext/eval.hpp"
#include "treetext/ingest.hpp"
#include "treetext/manifest.hpp"
#include "treetext/metrics.hpp"
#include "treetext/nn.hpp"
#include "treetext/reader.hpp"
#include "treetext/synth.hpp"
#include "treetext/tem.hpp"
#include "treetext/tensor_io.hpp"
#include "treetext/train.hpp"
#include "treetext/windows.hpp"
#include "treetext/pipeline.hpp"
