#pragma once

#include "promptleak/attack_engine.hpp"
#include "promptleak/classifier_http.hpp"
#include "promptleak/datasets.hpp"
#include "promptleak/digest.hpp"
#include "promptleak/error.hpp"
#include "promptleak/evaluation.hpp"
#include "promptleak/http_chat_backend.hpp"
#include "promptleak/jsonl.hpp"
#include "promptleak/log.hpp"
#include "promptleak/mock_server.hpp"
#include "promptleak/scripted_backend.hpp"
#include "promptleak/target_service.hpp"
#include "promptleak/text_metrics.hpp"
#include "promptleak/transforms.hpp"
#include "promptleak/verifier.hpp"
