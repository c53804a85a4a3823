"""Double-directional angle tracking experiment.

Two schemes per the deployment: the network-centric tracker runs one joint
filter per node over per-device-port subcarriers (arrival and departure angles
together), while the decentralized scheme tracks arrival angles at each node
from a single-port uplink pilot and lets the device track its own side from a
beamformed downlink pilot two TTIs later, optionally contaminated by
neighboring nodes serving their own devices on the same resources.

Node-side statistics aggregate over every line-of-sight node inside the
association radius (the network tracks everything it can hear); device-side
statistics come from the serving-node beam the device actually receives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .antenna import steering_vector
from .channel import ChannelModel, dbm_to_watt, subcarrier_offsets
from .geometry import angles_to_direction, bearing_in_frame, wrap_angle
from .plant import PilotPlant, make_interferer_tracks
from .scenario import Scenario, UeTrack
from .tracking import (DirectionalState, TrackingConfig, arrival_model,
                       directional_ekf_predict, doa_grid_init,
                       initial_directional_state, joint_model, phase_ramp_toa,
                       snapshot_ekf_update, stack_joint_snapshot)


@dataclass
class AngleExperimentConfig:
    dl_latency_ttis: int = 2
    n_dl_beams: int = 8           # simultaneous downlink pilot targets per node
    hop_span_hz: float = 10e6
    mute_neighbors: bool = False
    association_radius: float = 80.0


@dataclass
class AngleErrorRecord:
    tti: int
    an_id: int
    scheme: str      # "network_centric" or "decentralized"
    end: str         # "an" or "ue"
    muted: bool
    az_err: float    # radians, absolute
    el_err: float


def _hop_subcarrier(num, epoch: int, span_hz: float) -> int:
    n_span = max(1, int(span_hz / num.subcarrier_spacing))
    base = num.n_subcarriers // 2 - n_span // 2
    return base + (epoch * 7) % n_span


def _truth_angles(an, track, tti):
    az_an, el_an, _ = bearing_in_frame(an.position, track.positions[tti], an.rotation())
    az_ue, el_ue, _ = bearing_in_frame(track.positions[tti], an.position,
                                       track.rotation(tti))
    return az_an, el_an, az_ue, el_ue


def _angle_errors(mean, truth):
    return (abs(wrap_angle(mean[0] - truth[0])), abs(mean[1] - truth[1]))


class _EndTrack:
    def __init__(self):
        self.state = None
        self.last_epoch = -10


def run_angle_experiment(scenario: Scenario, track: UeTrack, seed: int,
                         cfg: AngleExperimentConfig | None = None,
                         tracking_cfg: TrackingConfig | None = None,
                         channel_model: ChannelModel | None = None,
                         n_ul_interferers: int = 1):
    """Track one device with both schemes; returns AngleErrorRecords.

    Epochs whose link is not line-of-sight are skipped (the tracked path does
    not exist then); tracks are re-acquired after gaps of several epochs.
    """
    cfg = cfg or AngleExperimentConfig()
    tcfg = tracking_cfg or TrackingConfig()
    num = scenario.numerology
    cm = channel_model or ChannelModel(num, master_seed=seed)
    plant = PilotPlant(scenario, cm,
                       make_interferer_tracks(scenario, n_ul_interferers, 250.0,
                                              track.n_samples, seed))
    fc = num.carrier_frequency
    noise_an = plant.noise_var_an()
    noise_ue = plant.noise_var_ue()
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xA27)))

    # fixed random street targets stand in for the neighbors' served devices
    ex, ey = scenario.bounds
    beam_targets = {}
    for an in scenario.an_list:
        pts = []
        while len(pts) < cfg.n_dl_beams:
            cand = rng.uniform((0, 0), (ex, ey))
            if scenario.grid.contains(cand):
                pts.append(np.array([cand[0], cand[1], 1.5]))
        beam_targets[an.id] = pts

    n_ue_ports = track.array.n_ports
    n_rs = num.rs_subcarriers
    rs_subs = np.arange(num.n_subcarriers // 2 - n_rs // 2,
                        num.n_subcarriers // 2 + (n_rs + 1) // 2)
    records: list[AngleErrorRecord] = []
    joint = {an.id: _EndTrack() for an in scenario.an_list}
    dec_an = {an.id: _EndTrack() for an in scenario.an_list}
    ue_track = _EndTrack()
    ue_serving = None

    def an_accept(an):
        rot = an.rotation()

        def accept(az, el):
            return (rot @ angles_to_direction(az, el))[2] < 0.0
        return accept

    def ue_accept(tti):
        rot = track.rotation(tti)

        def accept(az, el):
            return (rot @ angles_to_direction(az, el))[2] > -0.05
        return accept

    def fresh_if_stale(slot, epoch_idx):
        if slot.state is not None and epoch_idx - slot.last_epoch > 3:
            slot.state = None

    epoch_idx = 0
    for tti in range(0, track.n_samples - cfg.dl_latency_ttis, num.pilot_period_ttis):
        hop = _hop_subcarrier(num, epoch_idx, cfg.hop_span_hz)
        epoch_idx += 1
        dists = {an.id: np.linalg.norm(an.position[:2] - track.positions[tti, :2])
                 for an in scenario.an_list}
        visible = [an for an in scenario.an_list
                   if dists[an.id] <= cfg.association_radius
                   and cm.link_geometry(an, track, tti).is_los]
        if not visible:
            continue
        serving = min(visible, key=lambda an: dists[an.id])

        for an in visible:
            truth = _truth_angles(an, track, tti)

            # ---- network-centric joint tracker at this node. The per-port
            # phases carry the device manifold, so the delay ramp comes from
            # the wideband single-port RS at the same TTI.
            block = np.clip(np.arange(hop, hop + n_ue_ports), 0,
                            num.n_subcarriers - 1)
            port_snaps, _ = plant.ul_port_snapshots(an, track, tti, block)
            slot = joint[an.id]
            fresh_if_stale(slot, epoch_idx)
            if slot.state is None:
                az_an0, el_an0 = doa_grid_init(port_snaps[0], an.array, fc,
                                               conjugate=True, accept=an_accept(an))
            else:
                dt = (tti - slot.state.last_tti) * num.tti_duration
                slot.state = directional_ekf_predict(slot.state, dt,
                                                     tcfg.angular_accel_std)
                az_an0, el_an0 = slot.state.mean[0], slot.state.mean[1]
            wideband, _ = plant.ul_snapshot(an, track, tti, rs_subs)
            a_hat = steering_vector(an.array, az_an0, el_an0, fc)
            try:
                tau_hat, _, _ = phase_ramp_toa(
                    wideband @ a_hat / np.linalg.norm(a_hat),
                    subcarrier_offsets(num, rs_subs), noise_an)
            except ValueError:
                tau_hat = dists[an.id] / 3e8
            port_phases = np.exp(-2j * np.pi * subcarrier_offsets(num, block) * tau_hat)
            if slot.state is None:
                a_an1 = steering_vector(an.array, az_an0, el_an0, fc)[:an.array.n_elements]
                c = np.array([a_an1.T @ port_snaps[j, :an.array.n_elements]
                              for j in range(n_ue_ports)]) / port_phases
                azu0, elu0 = doa_grid_init(c, track.array, fc, conjugate=False,
                                           accept=ue_accept(tti))
                mean = np.array([az_an0, el_an0, azu0, elu0, 0, 0, 0, 0], dtype=float)
                cov = np.diag([np.deg2rad(2.0)**2] * 4 + [0.25] * 4)
                slot.state = DirectionalState(mean=mean, cov=cov, last_tti=tti)
            model = joint_model(an.array, track.array, fc, port_phases)
            slot.state, info = snapshot_ekf_update(slot.state,
                                                   stack_joint_snapshot(port_snaps),
                                                   model, noise_an)
            slot.state.last_tti = tti
            slot.last_epoch = epoch_idx
            if info.updated:
                ea = _angle_errors(slot.state.mean[0:2], truth[0:2])
                eu = _angle_errors(slot.state.mean[2:4], truth[2:4])
                records.append(AngleErrorRecord(tti, an.id, "network_centric", "an",
                                                False, ea[0], ea[1]))
                records.append(AngleErrorRecord(tti, an.id, "network_centric", "ue",
                                                False, eu[0], eu[1]))

            # ---- decentralized node side: single-port single-subcarrier pilot
            snapshot, _ = plant.ul_snapshot(an, track, tti, [hop])
            slot = dec_an[an.id]
            fresh_if_stale(slot, epoch_idx)
            if slot.state is None:
                az0, el0 = doa_grid_init(snapshot[0], an.array, fc, conjugate=True,
                                         accept=an_accept(an))
                slot.state = initial_directional_state(az0, el0,
                                                       tcfg.init_refine_deg, tti)
            else:
                dt = (tti - slot.state.last_tti) * num.tti_duration
                slot.state = directional_ekf_predict(slot.state, dt,
                                                     tcfg.angular_accel_std)
            slot.state, info_an = snapshot_ekf_update(
                slot.state, snapshot[0], arrival_model(an.array, fc, conjugate=True),
                noise_an)
            slot.state.last_tti = tti
            slot.last_epoch = epoch_idx
            if info_an.updated:
                ea = _angle_errors(slot.state.mean[:2], truth[0:2])
                records.append(AngleErrorRecord(tti, an.id, "decentralized", "an",
                                                cfg.mute_neighbors, ea[0], ea[1]))

        # ---- decentralized device side: beamformed return pilot from the
        # serving node after the configured latency
        tti_dl = tti + cfg.dl_latency_ttis
        an = serving
        if ue_serving != an.id:
            ue_track.state = None
            ue_serving = an.id
        fresh_if_stale(ue_track, epoch_idx)
        power_per_beam = dbm_to_watt(an.tx_power_dbm) / cfg.n_dl_beams
        an_est = dec_an[an.id].state
        w_serve = plant.beam_weights(an, an_est.mean[0], an_est.mean[1],
                                     power_per_beam)
        contaminators = [(an, [plant.beam_weights_toward(an, tgt, power_per_beam)
                               for tgt in beam_targets[an.id][1:]])]
        if not cfg.mute_neighbors:
            for other in scenario.an_list:
                if other.id == an.id or dists[other.id] > 200.0:
                    continue
                beams = [plant.beam_weights_toward(other, tgt, power_per_beam)
                         for tgt in beam_targets[other.id]]
                contaminators.append((other, beams))
        y_ue, _ = plant.dl_snapshot(track, an, w_serve, tti_dl, hop, contaminators)
        truth_dl = _truth_angles(an, track, tti_dl)
        if ue_track.state is None:
            az0, el0 = doa_grid_init(y_ue, track.array, fc, conjugate=False,
                                     accept=ue_accept(tti_dl))
            ue_track.state = initial_directional_state(az0, el0,
                                                       tcfg.init_refine_deg, tti_dl)
        else:
            dt = (tti_dl - ue_track.state.last_tti) * num.tti_duration
            ue_track.state = directional_ekf_predict(ue_track.state, dt,
                                                     tcfg.angular_accel_std)
        ue_track.state, info_ue = snapshot_ekf_update(
            ue_track.state, y_ue, arrival_model(track.array, fc, conjugate=False),
            noise_ue)
        ue_track.state.last_tti = tti_dl
        ue_track.last_epoch = epoch_idx
        if info_ue.updated:
            eu = _angle_errors(ue_track.state.mean[:2], truth_dl[2:4])
            records.append(AngleErrorRecord(tti_dl, an.id, "decentralized", "ue",
                                            cfg.mute_neighbors, eu[0], eu[1]))
    return records


def median_errors(records: list, scheme: str, end: str) -> tuple:
    az = [r.az_err for r in records if r.scheme == scheme and r.end == end]
    el = [r.el_err for r in records if r.scheme == scheme and r.end == end]
    if not az:
        return np.nan, np.nan
    return float(np.median(az)), float(np.median(el))
