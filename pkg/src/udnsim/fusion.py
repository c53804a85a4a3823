"""Central positioning and synchronization filters.

Per-node angle/delay trackers feed one joint update per pilot epoch into a
device-level filter. Three variants: bearings only (DoA), bearings plus
pseudo-delay with synchronized nodes (device clock estimated), and bearings
plus pseudo-delay with mutually offset nodes (per-node offsets estimated,
first participating node pinned as reference).

Pseudo-delay rows are wrapped modulo the subcarrier-spacing alias period,
matching what a phase-ramp delay estimate can actually observe; the device
clock state therefore lives on an arbitrary but consistent alias branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .antenna import SPEED_OF_LIGHT, steering_vector
from .channel import ChannelModel
from .geometry import angles_to_direction, direction_to_angles, wrap_angle
from .los import (DEFAULT_THRESHOLD_DB, init_rice_filter, los_test, rice_pf_step)
from .plant import PilotPlant, make_interferer_tracks
from .scenario import Scenario, UeTrack
from .tracking import (CHI2_GATE_1DF, Measurement, TrackingConfig, doa_grid_init,
                       directional_ekf_predict, initial_directional_state, is_spd,
                       multicarrier_arrival_model, snapshot_ekf_update, toa_ekf_step)


class FusionMode(str, Enum):
    DOA_ONLY = "doa_only"
    POS_CLOCK = "pos_clock"
    POS_SYNC = "pos_sync"


@dataclass
class FusionConfig:
    mode: FusionMode = FusionMode.POS_CLOCK
    use_3d: bool = False
    ue_height: float = 1.5
    accel_noise_std: float = 2.0          # m/s^2, covers braking and cornering
    clock_drift_noise: float = 1e-14      # (s/s)^2 per s
    an_offset_noise: float = 1e-20        # s^2 per s, node offsets barely move
    association_radius: float = 150.0
    angle_var_floor: float = np.deg2rad(0.1) ** 2
    min_los_steps: int = 4                # detector steps before a link may fuse


@dataclass
class FusionState:
    mode: FusionMode
    mean: np.ndarray
    cov: np.ndarray
    an_ids: list = field(default_factory=list)  # PosSync: [reference, others...]
    last_tti: int = -1
    n_pos: int = 2
    updates: int = 0

    @property
    def n_kin(self) -> int:
        return 2 * self.n_pos

    def position(self) -> np.ndarray:
        return self.mean[:self.n_pos]

    def clock_offset(self) -> float | None:
        if self.mode is FusionMode.DOA_ONLY:
            return None
        return float(self.mean[self.n_kin])

    def an_offset(self, an_id) -> float:
        if self.mode is not FusionMode.POS_SYNC or an_id == self.an_ids[0]:
            return 0.0
        return float(self.mean[self.n_kin + 2 + self.an_ids.index(an_id) - 1])


def make_fusion_state(mode: FusionMode, position, velocity=None, an_ids=(),
                      use_3d: bool = False, pos_std: float = 12.0,
                      vel_std: float = 8.0, clock_offset: float = 0.0,
                      clock_std: float = 2e-6) -> FusionState:
    n_pos = 3 if use_3d else 2
    pos = np.asarray(position, dtype=float)[:n_pos]
    vel = np.zeros(n_pos) if velocity is None else np.asarray(velocity, dtype=float)[:n_pos]
    mean = [pos, vel]
    var = [np.full(n_pos, pos_std**2), np.full(n_pos, vel_std**2)]
    if mode is not FusionMode.DOA_ONLY:
        mean.append([clock_offset, 0.0])
        var.append([clock_std**2, (3e-5) ** 2])
    if mode is FusionMode.POS_SYNC:
        n_other = max(len(an_ids) - 1, 0)
        mean.append(np.zeros(n_other))
        var.append(np.full(n_other, (2e-6) ** 2))
    mean = np.concatenate([np.atleast_1d(m) for m in mean])
    cov = np.diag(np.concatenate([np.atleast_1d(v) for v in var]))
    return FusionState(mode=mode, mean=mean, cov=cov, an_ids=list(an_ids), n_pos=n_pos)


def fusion_predict(state: FusionState, dt: float, cfg: FusionConfig) -> FusionState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not is_spd(state.cov):
        raise RuntimeError("fusion covariance not SPD")
    n = state.mean.size
    n_pos, n_kin = state.n_pos, state.n_kin
    F = np.eye(n)
    F[:n_pos, n_pos:n_kin] = dt * np.eye(n_pos)
    Q = np.zeros((n, n))
    qa = cfg.accel_noise_std**2
    for i in range(n_pos):
        Q[i, i] = qa * dt**4 / 4
        Q[i, n_pos + i] = Q[n_pos + i, i] = qa * dt**3 / 2
        Q[n_pos + i, n_pos + i] = qa * dt**2
    if state.mode is not FusionMode.DOA_ONLY:
        F[n_kin, n_kin + 1] = dt
        qd = cfg.clock_drift_noise
        Q[n_kin, n_kin] = qd * dt**3 / 3
        Q[n_kin, n_kin + 1] = Q[n_kin + 1, n_kin] = qd * dt**2 / 2
        Q[n_kin + 1, n_kin + 1] = qd * dt
    if state.mode is FusionMode.POS_SYNC:
        for i in range(n_kin + 2, n):
            Q[i, i] = cfg.an_offset_noise * dt
    mean = F @ state.mean
    cov = F @ state.cov @ F.T + Q
    return FusionState(state.mode, mean, 0.5 * (cov + cov.T), state.an_ids,
                       state.last_tti, n_pos, state.updates)


def _measurement_rows(state: FusionState, meas: Measurement, an_site, cfg: FusionConfig,
                      alias_period: float):
    """Rows (innovation, jacobian, variance, label) for one node's measurement."""
    n = state.mean.size
    n_pos = state.n_pos
    p = np.array([state.mean[0], state.mean[1],
                  state.mean[2] if n_pos == 3 else cfg.ue_height])
    R = an_site.rotation()
    u = R.T @ (p - an_site.position)
    r2 = float(u @ u)
    r = np.sqrt(r2)
    if r < 1e-3:
        return []
    rows = []
    du_dp = R.T[:, :n_pos]  # derivative of array-frame vector wrt state position

    ground2 = u[0] ** 2 + u[1] ** 2
    if ground2 > 1e-9:
        pred_az = np.arctan2(u[1], u[0])
        daz_du = np.array([-u[1], u[0], 0.0]) / ground2
        H = np.zeros(n)
        H[:n_pos] = daz_du @ du_dp
        innov = wrap_angle(meas.azimuth - pred_az)
        rows.append((innov, H, max(meas.az_var, cfg.angle_var_floor), "az"))

        w = u[2] / r
        s = np.sqrt(max(1.0 - w * w, 1e-9))
        dw_du = np.array([0.0, 0.0, 1.0]) / r - u * (u[2] / (r2 * r))
        del_du = -dw_du / s
        pred_el = np.arccos(np.clip(w, -1.0, 1.0))
        H = np.zeros(n)
        H[:n_pos] = del_du @ du_dp
        rows.append((meas.elevation - pred_el, H,
                     max(meas.el_var, cfg.angle_var_floor), "el"))

    if state.mode is not FusionMode.DOA_ONLY and meas.toa is not None:
        d_world = p - an_site.position
        dist = float(np.linalg.norm(d_world))
        pred = dist / SPEED_OF_LIGHT + state.clock_offset() - state.an_offset(meas.an_id)
        H = np.zeros(n)
        H[:n_pos] = d_world[:n_pos] / (dist * SPEED_OF_LIGHT)
        H[state.n_kin] = 1.0
        if state.mode is FusionMode.POS_SYNC and meas.an_id != state.an_ids[0]:
            H[state.n_kin + 2 + state.an_ids.index(meas.an_id) - 1] = -1.0
        innov = meas.toa - pred
        innov -= round(innov / alias_period) * alias_period
        rows.append((innov, H, meas.toa_var, "toa"))
    return rows


def fusion_update(state: FusionState, measurements: list, an_sites: dict,
                  cfg: FusionConfig, alias_period: float = np.inf):
    """Joint gated update over all LoS nodes of one pilot epoch.

    While the filter is still converging (few updates, velocity essentially
    prior-only) the bearing/delay rows are gated loosely so that transient
    prediction errors cannot starve the very rows needed to converge.
    """
    warming = state.updates < 4
    rows = []
    gated = 0
    for meas in measurements:
        if not meas.is_los:
            continue
        for innov, H, var, label in _measurement_rows(state, meas, an_sites[meas.an_id],
                                                      cfg, alias_period):
            S = float(H @ state.cov @ H + var)
            gate = CHI2_GATE_1DF
            if warming and label != "el":
                gate = 100.0
            if innov**2 / S > gate:
                gated += 1
                continue
            rows.append((innov, H, var))
    if not rows:
        return state, {"rows": 0, "gated": gated, "nis": np.nan, "df": 0}

    z = np.array([r[0] for r in rows])
    H = np.stack([r[1] for r in rows])
    Rd = np.array([r[2] for r in rows])
    P = state.cov
    S = H @ P @ H.T + np.diag(Rd)
    try:
        Sinv = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        return state, {"rows": 0, "gated": gated, "nis": np.nan, "df": 0,
                       "failed": True}
    K = P @ H.T @ Sinv
    mean = state.mean + K @ z
    IKH = np.eye(P.shape[0]) - K @ H
    cov = IKH @ P @ IKH.T + K @ np.diag(Rd) @ K.T
    cov = 0.5 * (cov + cov.T)
    if not is_spd(cov):
        return state, {"rows": 0, "gated": gated, "nis": np.nan, "df": 0,
                       "failed": True}
    nis = float(z @ Sinv @ z)
    out = FusionState(state.mode, mean, cov, state.an_ids, state.last_tti,
                      state.n_pos, state.updates + 1)
    return out, {"rows": len(rows), "gated": gated, "nis": nis, "df": len(rows)}


def consistent_toa_subset(state: FusionState, measurements: list, an_sites: dict,
                          cfg: FusionConfig, alias_period: float,
                          tolerance: float = 60e-9) -> set:
    """Node ids whose pseudo-delay agrees with the majority clock residual.

    Per-node delay trackers can settle on different alias branches after
    re-acquisitions; their residuals (pseudo-delay minus predicted range) then
    disagree by large fractions of the alias period. Rows outside ``tolerance``
    of the median residual are excluded from the joint update.
    """
    p = np.array([state.mean[0], state.mean[1],
                  state.mean[2] if state.n_pos == 3 else cfg.ue_height])
    resid = {}
    for meas in measurements:
        if meas.toa is None or not meas.is_los:
            continue
        an = an_sites[meas.an_id]
        r = meas.toa - np.linalg.norm(p - an.position) / SPEED_OF_LIGHT
        r += state.an_offset(meas.an_id)
        resid[meas.an_id] = r
    if len(resid) < 2:
        return set(resid)
    vals = np.array(list(resid.values()))
    med = np.median(vals)
    keep = set()
    for an_id, r in resid.items():
        d = r - med
        d -= round(d / alias_period) * alias_period if np.isfinite(alias_period) else 0.0
        if abs(d) <= tolerance:
            keep.add(an_id)
    return keep


def bearing_intersection(measurements: list, an_sites: dict) -> np.ndarray | None:
    """Ground-plane least-squares fix from world-frame bearing lines."""
    A = np.zeros((2, 2))
    b = np.zeros(2)
    n_used = 0
    for meas in measurements:
        an = an_sites[meas.an_id]
        k = angles_to_direction(meas.azimuth, meas.elevation)
        u = an.rotation() @ k
        g = u[:2]
        norm = np.linalg.norm(g)
        if norm < 1e-6:
            continue
        g = g / norm
        proj = np.eye(2) - np.outer(g, g)
        A += proj
        b += proj @ an.position[:2]
        n_used += 1
    if n_used < 2 or np.linalg.matrix_rank(A) < 2:
        return None
    return np.linalg.solve(A, b)


def single_an_fix(meas: Measurement, an_site, ue_height: float) -> np.ndarray:
    """Range-from-elevation fix when only one node sees the device."""
    k = angles_to_direction(meas.azimuth, meas.elevation)
    u = an_site.rotation() @ k
    dz = ue_height - an_site.position[2]
    t = dz / u[2] if abs(u[2]) > 1e-6 else 30.0
    t = float(np.clip(t, 1.0, 300.0))
    return an_site.position[:2] + t * u[:2]


# ---------------------------------------------------------------------------
# Full cascade
# ---------------------------------------------------------------------------

@dataclass
class CascadeCounts:
    dir_rejected: int = 0
    toa_rejected: int = 0
    rows_gated: int = 0
    tracks_dropped: int = 0
    nlos_skipped: int = 0
    updates_failed: int = 0


@dataclass
class PositioningRecord:
    tti: int
    ue_id: int
    mode: str
    true_x: float
    true_y: float
    est_x: float
    est_y: float
    err_2d: float
    clock_err: float
    cov_trace: float


@dataclass
class LosDecisionRecord:
    tti: int
    an_id: int
    ue_id: int
    is_los: bool
    log_likelihood_ratio: float
    k_estimate_db: float
    true_los: bool


@dataclass
class LinkRecord:
    tti: int
    an_id: int
    ue_id: int
    distance: float
    is_los: bool
    pathloss_db: float
    rice_k_db: float
    delay: float


@dataclass
class CascadeResult:
    records: list
    measurements: list
    counts: "CascadeCounts"
    los_decisions: list
    links: list


class _LinkTrack:
    """Per-(node, device) tracker bundle used by the cascade."""

    def __init__(self):
        self.direction = None
        self.toa = None
        self.rice = None
        self.misses = 0
        self.toa_misses = 0
        self.last_raw = None
        self.last_raw_tti = -1


def run_cascade(scenario: Scenario, tracks: list, modes: list, seed: int,
                channel_model: ChannelModel | None = None,
                tracking_cfg: TrackingConfig | None = None,
                fusion_cfg: FusionConfig | None = None,
                n_ul_interferers: int = 1, los_threshold_db: float = DEFAULT_THRESHOLD_DB,
                warmup_epochs: int = 5, dump_links: bool = False) -> CascadeResult:
    """Channel -> pilots -> per-node trackers -> LoS gate -> fusion, per device.

    The same measurement stream feeds every requested fusion mode, so mode
    comparisons are seed-matched.
    """
    num = scenario.numerology
    tcfg = tracking_cfg or TrackingConfig()
    fcfg = fusion_cfg or FusionConfig()
    cm = channel_model or ChannelModel(num, master_seed=seed)
    n_samples = max(tr.n_samples for tr in tracks)
    plant = PilotPlant(scenario, cm,
                       make_interferer_tracks(scenario, n_ul_interferers, 250.0,
                                              n_samples, seed))
    fc = num.carrier_frequency
    n_rs = num.rs_subcarriers
    k0 = num.n_subcarriers // 2 - n_rs // 2
    rs_subs = np.arange(k0, k0 + n_rs)
    angle_picks = np.unique(np.linspace(0, n_rs - 1, min(8, n_rs)).astype(int))
    alias = 1.0 / num.subcarrier_spacing
    an_sites = {an.id: an for an in scenario.an_list}
    models = {an.id: multicarrier_arrival_model(an.array, fc, len(angle_picks),
                                                conjugate=True)
              for an in scenario.an_list}

    counts = CascadeCounts()
    records: list[PositioningRecord] = []
    meas_rows: list[Measurement] = []
    los_rows: list[LosDecisionRecord] = []
    link_rows: list[LinkRecord] = []

    for track in tracks:
        links = {an.id: _LinkTrack() for an in scenario.an_list}
        filters = {}
        starved = {}
        prev_fix = {}
        epoch_idx = 0
        for tti in range(0, track.n_samples, num.pilot_period_ttis):
            p_true = track.positions[tti]
            epoch_meas = []
            for an in scenario.an_list:
                if np.linalg.norm(an.position[:2] - p_true[:2]) > fcfg.association_radius:
                    continue
                lt = links[an.id]
                snapshot, noise_var = plant.ul_snapshot(an, track, tti, rs_subs)
                if dump_links:
                    truth_link = cm.link_geometry(an, track, tti)
                    link_rows.append(LinkRecord(
                        tti=tti, an_id=an.id, ue_id=track.id,
                        distance=truth_link.distance, is_los=truth_link.is_los,
                        pathloss_db=truth_link.pathloss_db,
                        rice_k_db=truth_link.rice_k_db, delay=truth_link.delay))

                # LoS detector on uncombined reference-port amplitudes, thinned
                # past the channel coherence bandwidth to de-correlate samples
                if lt.rice is None:
                    lt.rice = init_rice_filter(cm.noise_rng(an.id, track.id, 0xE))
                lt.rice = rice_pf_step(lt.rice, np.abs(snapshot[::5, 0]), noise_var,
                                       cm.noise_rng(an.id, track.id, tti, 0xF))
                decision = los_test(lt.rice, los_threshold_db)
                los_rows.append(LosDecisionRecord(
                    tti=tti, an_id=an.id, ue_id=track.id, is_los=decision.is_los,
                    log_likelihood_ratio=decision.log_likelihood_ratio,
                    k_estimate_db=decision.k_estimate_db,
                    true_los=cm.link_geometry(an, track, tti).is_los))
                if not decision.is_los or lt.rice.steps < fcfg.min_los_steps:
                    counts.nlos_skipped += 1
                    continue

                rot = an.rotation()

                def accept(az, el, _rot=rot):
                    return (_rot @ angles_to_direction(az, el))[2] < 0.0

                stale = False
                if lt.direction is not None:
                    dt = (tti - lt.direction.last_tti) * num.tti_duration
                    predicted = directional_ekf_predict(lt.direction, dt,
                                                        tcfg.angular_accel_std)
                    # past ~a beamwidth of uncertainty the linearization is
                    # meaningless; fall back to re-acquisition
                    stale = np.sqrt(predicted.cov[0, 0]) > np.deg2rad(6.0)
                    lt.direction = predicted
                if lt.direction is None or stale:
                    az0, el0 = doa_grid_init(snapshot[n_rs // 2], an.array, fc,
                                             conjugate=True,
                                             coarse_deg=tcfg.init_coarse_deg,
                                             refine_deg=tcfg.init_refine_deg,
                                             accept=accept)
                    lt.direction = initial_directional_state(az0, el0,
                                                             tcfg.init_refine_deg, tti)
                y_angle = snapshot[angle_picks].reshape(-1)
                lt.direction, info = snapshot_ekf_update(lt.direction, y_angle,
                                                         models[an.id], noise_var)
                lt.direction.last_tti = tti
                # a "successful" update whose model fit captures little of the
                # snapshot power is locked on a sidelobe, not the path; a clean
                # lock scores near the Rice factor, a sidelobe far below it
                if info.updated and getattr(info, "quality", 0.0) < 3.0:
                    counts.dir_rejected += 1
                    counts.tracks_dropped += 1
                    lt.direction = None
                    lt.misses = 0
                    continue
                if not info.updated:
                    counts.dir_rejected += 1
                    lt.misses += 1
                    if lt.misses >= tcfg.miss_limit:
                        lt.direction = None
                        lt.misses = 0
                        counts.tracks_dropped += 1
                    continue
                lt.misses = 0

                combiner = steering_vector(an.array, lt.direction.mean[0],
                                           lt.direction.mean[1], fc)
                # a delay filter that keeps missing is rate-aliased; rebuild it
                # and seed the rate from consecutive raw fits
                if lt.toa is not None and lt.toa_misses >= 2:
                    lt.toa = None
                    counts.toa_rejected += 1
                was_fresh = lt.toa is None
                lt.toa, tinfo, raw, raw_var = toa_ekf_step(
                    lt.toa, snapshot, np.conj(combiner), num, rs_subs, noise_var,
                    tcfg, tti)
                lt.toa.last_tti = tti
                if (was_fresh and lt.last_raw is not None
                        and tti - lt.last_raw_tti == num.pilot_period_ttis):
                    # seed the rate from adjacent raw fits; a one-epoch gap
                    # keeps the alias branch unambiguous for in-spec drifts
                    dtr = (tti - lt.last_raw_tti) * num.tti_duration
                    dr = raw - lt.last_raw
                    dr -= round(dr / alias) * alias
                    lt.toa.mean[1] = dr / dtr
                    lt.toa.cov[1, 1] = (1e-5) ** 2
                lt.last_raw, lt.last_raw_tti = raw, tti
                toa_usable = True
                if abs(lt.toa.mean[1]) > 3.5e-5:
                    # faster than any in-spec clock drift: the rate state locked
                    # onto an alias branch, rebuild from scratch
                    lt.toa = None
                    toa_usable = False
                    counts.toa_rejected += 1
                elif not tinfo.updated and not was_fresh:
                    lt.toa_misses += 1
                    counts.toa_rejected += 1
                else:
                    lt.toa_misses = 0

                meas = Measurement(
                    an_id=an.id, ue_id=track.id, tti=tti,
                    azimuth=float(lt.direction.mean[0]),
                    elevation=float(lt.direction.mean[1]),
                    az_var=float(lt.direction.cov[0, 0]) + tcfg.multipath_az_std**2,
                    el_var=float(lt.direction.cov[1, 1]) + tcfg.multipath_el_std**2,
                    toa=float(lt.toa.mean[0]) if toa_usable else None,
                    toa_var=(float(lt.toa.cov[0, 0]) + tcfg.multipath_toa_std**2)
                            if toa_usable else None,
                    quality=getattr(info, "quality", 0.0),
                    is_los=True)
                epoch_meas.append(meas)
                meas_rows.append(meas)

            for mode in modes:
                # a filter that gates away every row for several epochs has
                # diverged; drop it and rebuild from the current bearings
                if mode in filters and starved.get(mode, 0) >= 3 and len(epoch_meas) >= 2:
                    del filters[mode]
                    starved[mode] = 0
                    counts.tracks_dropped += 1
                if mode not in filters:
                    if len(epoch_meas) >= 2:
                        fix = bearing_intersection(epoch_meas, an_sites)
                    elif len(epoch_meas) == 1:
                        fix = single_an_fix(epoch_meas[0], an_sites[epoch_meas[0].an_id],
                                            fcfg.ue_height)
                    else:
                        fix = None
                    if fix is None:
                        continue
                    prev = prev_fix.get(mode)
                    prev_fix[mode] = (fix, tti)
                    vel0 = None
                    if prev is not None and tti - prev[1] == num.pilot_period_ttis:
                        v = (fix - prev[0]) / ((tti - prev[1]) * num.tti_duration)
                        if np.linalg.norm(v) < 25.0:
                            vel0 = v
                    if vel0 is None:
                        continue  # wait for a second fix to pin the velocity
                    clock0 = 0.0
                    if epoch_meas and epoch_meas[0].toa is not None:
                        an0 = an_sites[epoch_meas[0].an_id]
                        p0 = np.array([fix[0], fix[1], fcfg.ue_height])
                        clock0 = epoch_meas[0].toa - np.linalg.norm(p0 - an0.position) / SPEED_OF_LIGHT
                    participating = sorted({m.an_id for m in epoch_meas} |
                                           {an.id for an in scenario.an_list
                                            if np.linalg.norm(an.position[:2] - p_true[:2])
                                            <= fcfg.association_radius})
                    filters[mode] = make_fusion_state(
                        mode, fix, velocity=vel0, an_ids=participating,
                        use_3d=fcfg.use_3d, vel_std=4.0, clock_offset=clock0)
                    filters[mode].last_tti = tti
                    continue
                st = filters[mode]
                if tti > st.last_tti:
                    st = fusion_predict(st, (tti - st.last_tti) * num.tti_duration,
                                        fcfg)
                    st.last_tti = tti
                known = set(st.an_ids) if mode is FusionMode.POS_SYNC else None
                usable = [m for m in epoch_meas if known is None or m.an_id in known]
                toa_ok = consistent_toa_subset(st, usable, an_sites, fcfg, alias)
                usable = [m if (m.toa is None or m.an_id in toa_ok)
                          else replace(m, toa=None, toa_var=None) for m in usable]
                st, uinfo = fusion_update(st, usable, an_sites, fcfg, alias)
                st.last_tti = tti
                counts.rows_gated += uinfo["gated"]
                if uinfo.get("failed"):
                    counts.updates_failed += 1
                struggling = uinfo["rows"] == 0 or uinfo["gated"] > uinfo["rows"]
                if struggling and usable:
                    starved[mode] = starved.get(mode, 0) + 1
                else:
                    starved[mode] = 0
                filters[mode] = st

                if epoch_idx >= warmup_epochs:
                    est = st.position()
                    err = float(np.hypot(est[0] - p_true[0], est[1] - p_true[1]))
                    clock_err = np.nan
                    if mode is not FusionMode.DOA_ONLY:
                        ref_offset = (an_sites[st.an_ids[0]].clock_offset
                                      if mode is FusionMode.POS_SYNC and st.an_ids else 0.0)
                        truth = track.clock_offset[tti] - ref_offset
                        ce = st.clock_offset() - truth
                        ce -= round(ce / alias) * alias
                        clock_err = float(ce)
                    records.append(PositioningRecord(
                        tti=tti, ue_id=track.id, mode=mode.value,
                        true_x=float(p_true[0]), true_y=float(p_true[1]),
                        est_x=float(est[0]), est_y=float(est[1]), err_2d=err,
                        clock_err=clock_err, cov_trace=float(np.trace(st.cov))))
            epoch_idx += 1
    return CascadeResult(records=records, measurements=meas_rows, counts=counts,
                         los_decisions=los_rows, links=link_rows)
