"""12-lead <-> 8 independent leads.

Leads III, aVR, aVL and aVF are linear in I and II (Einthoven and Goldberger),
so only I, II and V1..V6 carry independent information.
"""
from __future__ import annotations

import numpy as np

LEADS_12 = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
LEADS_8 = ("I", "II", "V1", "V2", "V3", "V4", "V5", "V6")
DERIVED = ("III", "aVR", "aVL", "aVF")


class LeadError(ValueError):
    pass


def _select(signal, names, wanted):
    signal = np.asarray(signal)
    names = list(names)
    if signal.shape[0] != len(names):
        raise LeadError(f"{signal.shape[0]} channels but {len(names)} lead names")
    missing = [w for w in wanted if w not in names]
    if missing:
        raise LeadError(f"missing leads: {missing}")
    return signal[[names.index(w) for w in wanted]]


def derive_limb_leads(lead_i, lead_ii) -> dict:
    lead_i = np.asarray(lead_i)
    lead_ii = np.asarray(lead_ii)
    return {
        "III": lead_ii - lead_i,
        "aVR": -(lead_i + lead_ii) / 2,
        "aVL": lead_i - lead_ii / 2,
        "aVF": lead_ii - lead_i / 2,
    }


def reduce_to_independent(signal, lead_names=LEADS_12) -> np.ndarray:
    """(12, L) -> (8, L) keeping I, II, V1..V6 sample-exact."""
    return _select(signal, lead_names, LEADS_8)


def reconstruct_full(signal, lead_names=LEADS_8) -> np.ndarray:
    """(8, L) -> (12, L) in standard order, derived limb leads computed pointwise."""
    signal = np.asarray(signal)
    base = dict(zip(LEADS_8, _select(signal, lead_names, LEADS_8)))
    base.update(derive_limb_leads(base["I"], base["II"]))
    return np.stack([base[name] for name in LEADS_12]).astype(signal.dtype, copy=False)


def expand_leads(signal, lead_names) -> tuple[np.ndarray, tuple]:
    """Append the four derived limb leads to any lead set containing I and II.

    An 8-lead input comes back as the standard 12-lead order.
    """
    names = tuple(lead_names)
    if set(LEADS_8) <= set(names):
        return reconstruct_full(signal, names), LEADS_12
    base = _select(signal, names, ("I", "II"))
    derived = derive_limb_leads(base[0], base[1])
    extra = [n for n in DERIVED if n not in names]
    out = np.concatenate([np.asarray(signal), np.stack([derived[n] for n in extra])])
    return out.astype(np.asarray(signal).dtype, copy=False), names + tuple(extra)
