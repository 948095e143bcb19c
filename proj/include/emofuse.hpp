#pragma once

#include "emofuse/checkpoint.hpp"
#include "emofuse/classifier.hpp"
#include "emofuse/clients.hpp"
#include "emofuse/domain.hpp"
#include "emofuse/embedding.hpp"
#include "emofuse/embedding_store.hpp"
#include "emofuse/error.hpp"
#include "emofuse/experiment.hpp"
#include "emofuse/metrics.hpp"
#include "emofuse/prompt.hpp"
#include "emofuse/prompting.hpp"
#include "emofuse/service.hpp"
