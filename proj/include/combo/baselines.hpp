#pragma once

#include <optional>
#include <span>

#include "combo/config.hpp"
#include "combo/gossip.hpp"
#include "combo/rng.hpp"

namespace combo {

enum class BaselineKind { fedavg, naive_gossip };

/// One synchronous FedAvg round on the federation's live workers.
///
/// Every live worker runs its local update; the server forms the |D|-weighted
/// average of all updated models and every worker adopts it. The server must
/// be alive. Result entries carry no pulls.
RoundResult fedavg_round(Federation& federation, WorkerId server);

// Picks a server uniformly among the live workers; nullopt when none is left.
std::optional<WorkerId> pick_server(std::span<const WorkerId> alive, Rng& rng);

// Whole-model gossip: the same protocol with a single segment.
RunConfig make_naive_gossip_config(RunConfig config);

}  // namespace combo
