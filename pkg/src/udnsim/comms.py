"""Downlink multi-user MIMO stage.

Precoders (matched filter, zero forcing, block diagonalization, and geometric
steering from estimated bearings), receive filters (pilot-based MRC under
contamination, geometric steering), round-robin and fair time-domain
schedulers, and SINR/throughput accounting.

Precoder outputs are direction matrices normalized so the co-scheduled set
sums to the node power budget: sum_i ||W_i||_F^2 = power_budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .antenna import ArrayGeometry, steering_vector


class SchedulingViolation(RuntimeError):
    """A device could not be served under the requested precoding scheme."""


@dataclass
class Precoder:
    ue_id: int
    matrix: np.ndarray  # (an_ports, streams)
    kind: str
    csit_age: float = 0.0


@dataclass
class ReceiveFilter:
    ue_id: int
    matrix: np.ndarray  # (ue_ports, streams), unit-norm columns
    kind: str


@dataclass
class SchedulingEpoch:
    tti: int
    served: dict            # an_id -> list of ue_ids (slot order = pilot resource)
    sinr_db: dict = field(default_factory=dict)   # ue_id -> mean SINR (dB)
    rate_bps: dict = field(default_factory=dict)  # ue_id -> instantaneous rate


def _dominant_rows(h: np.ndarray, n: int) -> np.ndarray:
    """Reduce a device channel to its ``n`` strongest receive dimensions."""
    u, _, _ = np.linalg.svd(h, full_matrices=False)
    return u[:, :n].conj().T @ h


def _normalize_set(mats: dict, power_budget: float) -> None:
    total = sum(np.linalg.norm(m) ** 2 for m in mats.values())
    if total > 0:
        scale = np.sqrt(power_budget / total)
        for k in mats:
            mats[k] = mats[k] * scale


def bd_precoder(channels: dict, power_budget: float, streams: int = 1):
    """Block-diagonalization precoders for one co-scheduled set.

    ``channels`` maps ue_id -> downlink matrix (ue_ports, an_ports). Other-user
    channels are nulled exactly while the stacked ports fit into the node's
    ports; otherwise each interferee is represented by its dominant receive
    subspace. Devices without a usable nullspace are dropped (violation).
    Returns (precoders, dropped_ids).
    """
    ids = list(channels.keys())
    if not ids:
        return [], []
    n_tx = next(iter(channels.values())).shape[1]
    total_other_ports = {i: sum(channels[j].shape[0] for j in ids if j != i) for i in ids}
    precoders = {}
    dropped = []
    for i in ids:
        others = [channels[j] for j in ids if j != i]
        if others:
            if total_other_ports[i] < n_tx:
                stack = np.vstack(others)
            else:
                stack = np.vstack([_dominant_rows(h, streams) for h in others])
            if stack.shape[0] >= n_tx:
                dropped.append(i)
                continue
            _, s, vh = np.linalg.svd(stack)
            rank = int(np.sum(s > max(s[0], 1e-12) * 1e-9)) if s.size else 0
            null_basis = vh[rank:].conj().T  # (n_tx, n_null)
            if null_basis.shape[1] < 1:
                dropped.append(i)
                continue
        else:
            null_basis = np.eye(n_tx, dtype=complex)
        h_eff = channels[i] @ null_basis
        _, _, vh_eff = np.linalg.svd(h_eff)
        take = min(streams, vh_eff.shape[0])
        w = null_basis @ vh_eff[:take].conj().T
        precoders[i] = w / np.linalg.norm(w)
    _normalize_set(precoders, power_budget)
    return ([Precoder(ue_id=i, matrix=precoders[i], kind="BD") for i in precoders],
            dropped)


def mf_precoder(channels: dict, power_budget: float, streams: int = 1):
    """Per-device matched eigen-beamforming, ignoring other users."""
    precoders = {}
    for i, h in channels.items():
        _, _, vh = np.linalg.svd(h)
        w = vh[:min(streams, vh.shape[0])].conj().T
        precoders[i] = w / np.linalg.norm(w)
    _normalize_set(precoders, power_budget)
    return [Precoder(ue_id=i, matrix=precoders[i], kind="MF") for i in precoders]


def zf_precoder(channels: dict, power_budget: float, streams: int = 1,
                ridge: float = 0.0):
    """Zero forcing on the stacked dominant receive rows of all devices.

    Rank-deficient stacks fall back to a ridge-regularized inverse (flagged by
    the returned boolean).
    """
    ids = list(channels.keys())
    rows = [_dominant_rows(channels[i], streams) for i in ids]
    H = np.vstack(rows)
    G = H @ H.conj().T
    regularized = False
    try:
        cond = np.linalg.cond(G)
    except np.linalg.LinAlgError:
        cond = np.inf
    if cond > 1e10 or ridge > 0:
        regularized = cond > 1e10
        G = G + max(ridge, 1e-6 * np.trace(G).real / G.shape[0]) * np.eye(G.shape[0])
    W = H.conj().T @ np.linalg.inv(G)
    precoders = {}
    row = 0
    for i, r in zip(ids, rows):
        w = W[:, row:row + r.shape[0]]
        precoders[i] = w / np.linalg.norm(w)
        row += r.shape[0]
    _normalize_set(precoders, power_budget)
    return ([Precoder(ue_id=i, matrix=precoders[i], kind="ZF") for i in precoders],
            regularized)


def geometric_precoder(angle_estimates: dict, array: ArrayGeometry, frequency: float,
                       power_budget: float):
    """Location-based precoding from estimated bearings.

    ``angle_estimates`` maps ue_id -> (azimuth, elevation) in the node frame.
    The multiuser matrix is synthesized from the rank-1 steering rows and then
    block-diagonalized, so co-scheduled beams null each other geometrically.
    """
    synth = {}
    for i, (az, el) in angle_estimates.items():
        a = steering_vector(array, az, el, frequency)
        synth[i] = np.conj(a)[None, :]  # row so that H_row @ a is maximal
    precoders, dropped = bd_precoder(synth, power_budget, streams=1)
    for p in precoders:
        p.kind = "GeometricLoS"
    return precoders, dropped


def mrc_filter(pilot_observation: np.ndarray, ue_id: int) -> ReceiveFilter:
    """Receive filter aligned with the measured (possibly contaminated) pilot."""
    obs = np.atleast_2d(pilot_observation.T).T  # (ports, streams)
    norms = np.linalg.norm(obs, axis=0)
    if not np.all(norms > 0):
        raise ValueError("zero pilot observation")
    return ReceiveFilter(ue_id=ue_id, matrix=obs / norms, kind="MRC_from_DL_pilot")


def geometric_filter(angle_estimate, array: ArrayGeometry, frequency: float,
                     ue_id: int) -> ReceiveFilter:
    """Receive filter steered at the serving node's estimated bearing."""
    a = steering_vector(array, angle_estimate[0], angle_estimate[1], frequency)
    return ReceiveFilter(ue_id=ue_id, matrix=(a / np.linalg.norm(a))[:, None],
                         kind="GeometricLoS")


def receive_filter(kind: str, ue_id: int, pilot_observation=None,
                   angle_estimate=None, array=None, frequency=None) -> ReceiveFilter:
    if kind == "MRC_from_DL_pilot":
        return mrc_filter(pilot_observation, ue_id)
    if kind == "GeometricLoS":
        return geometric_filter(angle_estimate, array, frequency, ue_id)
    raise ValueError(f"unknown receive filter kind {kind!r}")


# ---------------------------------------------------------------------------
# Scheduling
# ---------------------------------------------------------------------------

@dataclass
class SchedulerState:
    kind: str  # "round_robin" or "fair_td"
    pointers: dict = field(default_factory=dict)   # an_id -> queue position
    throughput: dict = field(default_factory=dict)  # ue_id -> running mean rate
    epochs: dict = field(default_factory=dict)      # ue_id -> epochs elapsed


def schedule_epoch(state: SchedulerState, tti: int, an_ue_map: dict,
                   max_served: int = 8) -> SchedulingEpoch:
    """Pick the served set per node for one epoch.

    Round-robin cycles each node's queue. Fair time-domain scheduling serves
    the maximum number on even epochs and restricts candidates to the global
    lowest-quartile past-average throughput on odd epochs.
    """
    served = {}
    restrict = None
    if state.kind == "fair_td" and (tti // 1) % 2 == 1:
        all_ues = [u for ues in an_ue_map.values() for u in ues]
        if all_ues:
            past = np.array([state.throughput.get(u, 0.0) for u in all_ues])
            cut = np.quantile(past, 0.25) if len(all_ues) >= 4 else np.inf
            restrict = {u for u, p in zip(all_ues, past) if p <= cut}
    for an_id, ues in an_ue_map.items():
        if not ues:
            served[an_id] = []
            continue
        candidates = [u for u in ues if restrict is None or u in restrict]
        if restrict is not None:
            served[an_id] = candidates[:max_served]
            continue
        ptr = state.pointers.get(an_id, 0) % len(ues)
        take = min(max_served, len(ues))
        order = [ues[(ptr + k) % len(ues)] for k in range(take)]
        state.pointers[an_id] = (ptr + take) % len(ues)
        served[an_id] = order
    return SchedulingEpoch(tti=tti, served=served)


def update_history(state: SchedulerState, rates: dict, all_ues) -> None:
    """Fold one epoch's rates (0 for unserved) into the running means."""
    for u in all_ues:
        n = state.epochs.get(u, 0)
        mean = state.throughput.get(u, 0.0)
        state.throughput[u] = (mean * n + rates.get(u, 0.0)) / (n + 1)
        state.epochs[u] = n + 1


# ---------------------------------------------------------------------------
# SINR and rate accounting
# ---------------------------------------------------------------------------

def shannon_rate(sinr: np.ndarray, bandwidth: float, dl_fraction: float,
                 se_cap: float = 4.8) -> float:
    """Capped Shannon rate averaged over the evaluated subcarriers."""
    se = np.minimum(np.log2(1.0 + sinr), se_cap)
    return float(dl_fraction * bandwidth * np.mean(se, axis=0).sum())


def sinr_per_subcarrier(rx: ReceiveFilter, own_channel: np.ndarray,
                        own_precoder: np.ndarray, interferers: list,
                        noise_var: float, tx_power_density: float) -> np.ndarray:
    """SINR per evaluated subcarrier and stream.

    ``own_channel`` is (n_sc, ue_ports, an_ports); ``interferers`` holds
    (channel, precoder) pairs covering both intra- and inter-node streams.
    Precoder norms carry the power split; ``tx_power_density`` converts the
    normalized budget to per-subcarrier transmit power.
    """
    w = rx.matrix  # (ports, streams)
    n_sc = own_channel.shape[0]
    n_streams = own_precoder.shape[1]
    sig = np.zeros((n_sc, n_streams))
    intra = np.zeros((n_sc, n_streams))
    for k in range(n_sc):
        eff = w.conj().T @ own_channel[k] @ own_precoder  # (streams, streams)
        sig[k] = tx_power_density * np.abs(np.diag(eff)) ** 2
        intra[k] = tx_power_density * (np.abs(eff) ** 2).sum(axis=1) - sig[k]
    inter = np.zeros((n_sc, n_streams))
    for h, wtx in interferers:
        for k in range(n_sc):
            leak = w.conj().T @ h[k] @ wtx
            inter[k] += tx_power_density * (np.abs(leak) ** 2).sum(axis=1)
    return sig / (intra + inter + noise_var)
