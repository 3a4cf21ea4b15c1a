"""Coupled simulation of an agent queue against the optimal-policy queue.

Both queues see the same arrivals, arrival contexts, and departure uniform in
every round, so their length difference isolates the effect of the policy.
"""
from __future__ import annotations

from typing import Callable, Optional

from .metrics import RoundRecord, per_round_regret
from .policies import OptimalPolicy, Policy
from .queue_env import MnlInstance, QueueState, RandomStreams, step


def coupled_run(instance: MnlInstance, agent_policy: Policy, T: int, seed: int,
                context_map: Optional[Callable] = None, trace: Optional[list] = None) -> list:
    """Run ``agent_policy`` for ``T`` rounds beside the optimal shadow queue.

    Queue lengths are recorded at the end of each round. If ``trace`` is a
    list, ``(round randomness, agent decision, shadow decision, y_agent,
    y_shadow)`` tuples are appended to it for auditing.
    """
    streams = RandomStreams(seed)
    agent_policy.start(instance, streams.thompson, context_map=context_map)
    shadow = OptimalPolicy().start(instance, None)
    agent_q, opt_q = QueueState(), QueueState()
    records = []
    cum = 0.0
    for t in range(1, T + 1):
        rand = streams.draw_round(instance.pool_size)
        dec = agent_policy.decide(agent_q, rand)
        dec_opt = shadow.decide(opt_q, rand)
        gap = per_round_regret(dec.query.idx, dec.assortment, instance)
        _, _, y = step(agent_q, dec, rand, instance)
        _, _, y_opt = step(opt_q, dec_opt, rand, instance)
        agent_policy.update(dec, y, rand)
        cum += gap
        records.append(RoundRecord(t=t, Q_agent=agent_q.Q, Q_opt=opt_q.Q, per_round_regret=gap,
                                   cum_regret=cum, explored=dec.explored))
        if trace is not None:
            trace.append((rand, dec, dec_opt, y, y_opt))
    return records
