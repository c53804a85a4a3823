"""Downlink throughput experiment: schedulers x precoders x receive filters.

Devices associate with the closest node by estimated position, nodes precode
from aged uplink CSI or from estimated bearings (with the configured
measurement error and aging), devices filter with pilot-based MRC (subject to
cross-node pilot contamination on the shared pilot resources) or with
geometric steering, and per-epoch Shannon rates are accumulated. All cases
share one channel realization per run, so scheme comparisons are seed-matched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelModel, dbm_to_watt, thermal_noise_w
from .comms import (Precoder, SchedulerState, bd_precoder, geometric_filter,
                    geometric_precoder, mf_precoder, mrc_filter, schedule_epoch,
                    shannon_rate, sinr_per_subcarrier, update_history, zf_precoder)
from .geometry import bearing_in_frame
from .scenario import Scenario


@dataclass
class ThroughputConfig:
    duration: float = 0.2
    subframe_ttis: int = 10
    n_eval_subcarriers: int = 4
    max_coscheduled: int = 8
    streams_per_ue: int = 1
    se_cap: float = 4.8
    angle_error_std: float = np.deg2rad(2.0)
    pos_error_std: float = 0.5
    csit_age_s: float = 3.3e-3
    mute_pilot_contamination: bool = False


@dataclass
class RateRecord:
    tti: int
    ue_id: int
    serving_an: int
    tx_kind: str
    rx_kind: str
    scheduler: str
    sinr_db: float
    rate_bps: float


@dataclass
class ThroughputCase:
    tx_kind: str       # "bd", "mf", "zf", "geo"
    rx_kind: str       # "mrc", "geo"
    scheduler: str = "round_robin"

    @property
    def label(self) -> str:
        return f"{self.tx_kind}-{self.rx_kind}-{self.scheduler}"


def _tx_precoders(case, an, frequency, csit, angles, power_w, streams, violations):
    if case.tx_kind == "bd":
        precoders, dropped = bd_precoder(csit, power_w, streams)
    elif case.tx_kind == "mf":
        precoders, dropped = mf_precoder(csit, power_w, streams), []
    elif case.tx_kind == "zf":
        precoders, _ = zf_precoder(csit, power_w, streams)
        dropped = []
    elif case.tx_kind == "geo":
        precoders, dropped = geometric_precoder(angles, an.array, frequency, power_w)
    else:
        raise ValueError(f"unknown precoder kind {case.tx_kind!r}")
    violations.extend(dropped)
    return {p.ue_id: p for p in precoders}


def run_throughput_experiment(scenario: Scenario, tracks: list, cases: list,
                              seed: int, cfg: ThroughputConfig | None = None,
                              channel_model: ChannelModel | None = None):
    """Run every case on one shared channel realization.

    Returns (records, violations) where ``violations`` counts scheduling drops
    per case label.
    """
    cfg = cfg or ThroughputConfig()
    num = scenario.numerology
    cm = channel_model or ChannelModel(num, master_seed=seed)
    fc = num.carrier_frequency
    bandwidth = num.n_subcarriers * num.subcarrier_spacing
    eval_subs = np.linspace(0, num.n_subcarriers - 1, cfg.n_eval_subcarriers).astype(int)
    center_eval = len(eval_subs) // 2
    noise_sc = thermal_noise_w(num.subcarrier_spacing, cm.config.ue_noise_figure_db)
    age_ttis = max(1, int(round(cfg.csit_age_s / num.tti_duration)))
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0)))

    n_subframes = int(cfg.duration / (cfg.subframe_ttis * num.tti_duration))
    n_samples = min(tr.n_samples for tr in tracks)
    states = {c.label: SchedulerState(kind=c.scheduler) for c in cases}
    records: list[RateRecord] = []
    violations = {c.label: 0 for c in cases}
    all_ue_ids = [tr.id for tr in tracks]
    tracks_by_id = {tr.id: tr for tr in tracks}

    for sf in range(n_subframes):
        tti = min(sf * cfg.subframe_ttis, n_samples - 1)
        tti_aged = max(0, tti - age_ttis)

        est_pos = {tr.id: tr.positions[tti, :2] + cfg.pos_error_std * rng.standard_normal(2)
                   for tr in tracks}
        serving = {}
        for uid, pos in est_pos.items():
            d = [np.linalg.norm(an.position[:2] - pos) for an in scenario.an_list]
            serving[uid] = scenario.an_list[int(np.argmin(d))].id
        an_ue_map = {an.id: [uid for uid in all_ue_ids if serving[uid] == an.id]
                     for an in scenario.an_list}

        # shared channel evaluations for this subframe
        h_now, h_aged = {}, {}
        for tr in tracks:
            for an in scenario.an_list:
                h_now[(tr.id, an.id)] = cm.synthesize(an, tr, tti, eval_subs).matrices
        for uid, an_id in serving.items():
            an = scenario.an_by_id(an_id)
            h_aged[(uid, an_id)] = cm.synthesize(an, tracks_by_id[uid], tti_aged,
                                                 eval_subs).matrices

        # bearing estimates: aged geometry plus the configured random error
        tx_angles, rx_angles = {}, {}
        for uid, an_id in serving.items():
            an = scenario.an_by_id(an_id)
            tr = tracks_by_id[uid]
            az, el, _ = bearing_in_frame(an.position, tr.positions[tti_aged],
                                         an.rotation())
            tx_angles[uid] = (az + cfg.angle_error_std * rng.standard_normal(),
                              el + cfg.angle_error_std * rng.standard_normal())
            az_u, el_u, _ = bearing_in_frame(tr.positions[tti_aged], an.position,
                                             tr.rotation(tti_aged))
            rx_angles[uid] = (az_u + cfg.angle_error_std * rng.standard_normal(),
                              el_u + cfg.angle_error_std * rng.standard_normal())

        pilot_noise = {uid: np.sqrt(noise_sc / 2) * (rng.standard_normal(
            tracks_by_id[uid].array.n_ports) + 1j * rng.standard_normal(
            tracks_by_id[uid].array.n_ports)) for uid in all_ue_ids}

        for case in cases:
            state = states[case.label]
            epoch = schedule_epoch(state, sf, an_ue_map, cfg.max_coscheduled)
            active = {an_id: ues for an_id, ues in epoch.served.items() if ues}

            drops: list = []
            precoders: dict[int, Precoder] = {}
            slot_of: dict[int, int] = {}
            for an_id, ues in active.items():
                an = scenario.an_by_id(an_id)
                power_w = dbm_to_watt(an.tx_power_dbm)
                csit = {u: h_aged.get((u, an_id),
                                      h_now[(u, an_id)])[center_eval] for u in ues}
                angles = {u: tx_angles[u] for u in ues}
                pmap = _tx_precoders(case, an, fc, csit, angles, power_w,
                                     cfg.streams_per_ue, drops)
                for slot, u in enumerate(ues):
                    if u in pmap:
                        precoders[u] = pmap[u]
                        slot_of[u] = slot
            violations[case.label] += len(drops)

            density = 1.0 / num.n_subcarriers  # per-subcarrier share of the budget
            rates = {}
            for an_id, ues in active.items():
                for u in ues:
                    if u not in precoders:
                        continue
                    tr = tracks_by_id[u]
                    own = h_now[(u, an_id)]
                    # pilot observation on the shared pilot resource (slot index)
                    obs = own[center_eval] @ precoders[u].matrix
                    if not cfg.mute_pilot_contamination:
                        for an2_id, ues2 in active.items():
                            if an2_id == an_id or slot_of[u] >= len(ues2):
                                continue
                            u2 = ues2[slot_of[u]]
                            if u2 in precoders:
                                obs = obs + h_now[(u, an2_id)][center_eval] @ precoders[u2].matrix
                    obs = np.sqrt(density) * obs + pilot_noise[u][:, None]
                    if case.rx_kind == "mrc":
                        rx = mrc_filter(obs, u)
                    else:
                        rx = geometric_filter(rx_angles[u], tr.array, fc, u)

                    interferers = []
                    for u2, an2_id in serving.items():
                        if u2 == u or u2 not in precoders:
                            continue
                        interferers.append((h_now[(u, an2_id)], precoders[u2].matrix))
                    sinr = sinr_per_subcarrier(rx, own, precoders[u].matrix,
                                               interferers, noise_sc, density)
                    rate = shannon_rate(sinr, bandwidth, num.dl_fraction, cfg.se_cap)
                    rates[u] = rate
                    records.append(RateRecord(
                        tti=tti, ue_id=u, serving_an=an_id, tx_kind=case.tx_kind,
                        rx_kind=case.rx_kind, scheduler=case.scheduler,
                        sinr_db=float(10 * np.log10(max(sinr.mean(), 1e-12))),
                        rate_bps=rate))
            update_history(state, rates, all_ue_ids)
    return records, violations
