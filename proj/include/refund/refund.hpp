#pragma once

#include "refund/common.hpp"
#include "refund/crypto.hpp"
#include "refund/group.hpp"
#include "refund/keys.hpp"
#include "refund/schnorr.hpp"
#include "refund/transaction.hpp"
#include "refund/ledger.hpp"
#include "refund/record.hpp"
#include "refund/transcript.hpp"
#include "refund/protocol.hpp"
#include "refund/recovery.hpp"
#include "refund/mixer.hpp"
#include "refund/scenario.hpp"
