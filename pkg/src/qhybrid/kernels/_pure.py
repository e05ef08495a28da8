"""Vectorized numpy gate kernel (reference and fallback backend)."""
import numpy as np


def target_offsets(targets):
    """Index offset of each local basis state of the gate.

    Local bit ``j`` of the gate index addresses ``targets[j]``.
    """
    d = 1 << len(targets)
    offs = np.zeros(d, dtype=np.int64)
    for l in range(d):
        for j, q in enumerate(targets):
            if (l >> j) & 1:
                offs[l] += 1 << int(q)
    return offs


def apply_gate(state, matrix, targets, ctrl_mask, ctrl_value):
    """Apply ``matrix`` in place on ``targets`` where ``index & ctrl_mask == ctrl_value``."""
    n = state.shape[0]
    tmask = 0
    for q in targets:
        tmask |= 1 << int(q)
    idx = np.arange(n, dtype=np.int64)
    base = idx[((idx & tmask) == 0) & ((idx & int(ctrl_mask)) == int(ctrl_value))]
    if base.size == 0:
        return
    sel = base[:, None] + target_offsets(targets)[None, :]
    state[sel] = state[sel] @ matrix.T
