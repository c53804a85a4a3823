"""Directional and delay trackers driven by complex array snapshots.

The measurement model of the directional filters is the raw snapshot
y = A(angles) b + n where the columns of A hold the (possibly conjugated)
steering vector per polarization block and b is a nuisance path weight solved
by least squares at every update. Innovations therefore live in the orthogonal
complement of span(A); the reported chi-square degrees of freedom account for
the 2*rank(A) real dimensions absorbed by the weight fit.

Pseudo time-of-arrival (propagation delay plus device-minus-node clock offset)
is tracked by a two-state filter fed with weighted phase-ramp fits across the
reference-signal subcarriers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .antenna import ArrayGeometry, steering_jacobian, steering_vector
from .channel import subcarrier_offsets
from .geometry import wrap_angle
from .scenario import Numerology

CHI2_GATE_1DF = 9.0  # 99.73 %


class StateCorruptedError(RuntimeError):
    """A filter covariance stopped being symmetric positive definite."""


@dataclass
class TrackingConfig:
    # sized for close fly-bys in dense deployments: at 14 m/s past a node 10 m
    # away the bearing rate tops 1.4 rad/s with comparable angular acceleration
    angular_accel_std: float = 0.8        # rad/s^2, directional process noise
    toa_rate_noise: float = 1e-14         # (s/s)^2 per s, delay-rate process noise
    multipath_az_std: float = 2.6e-3      # rad, azimuth error floor per measurement
    multipath_el_std: float = 2.6e-2      # rad, elevation error floor (weak near horizon)
    multipath_toa_std: float = 1.5e-9     # s at the reference RS bandwidth
    multipath_toa_ref_bw: float = 9.6e6
    miss_limit: int = 5                   # rejected updates before a track drops
    init_coarse_deg: float = 5.0
    init_refine_deg: float = 1.0


@dataclass
class DirectionalState:
    """Angles plus angular rates; angles come first, (az, el) per pair."""

    mean: np.ndarray
    cov: np.ndarray
    last_tti: int = -1

    @property
    def n_angles(self) -> int:
        return self.mean.size // 2

    def wrap(self):
        for i in range(0, self.n_angles, 2):
            self.mean[i] = wrap_angle(self.mean[i])
            self.mean[i + 1] = float(np.clip(self.mean[i + 1], 1e-6, np.pi - 1e-6))


@dataclass
class ToaState:
    mean: np.ndarray  # [pseudo_toa, toa_rate]
    cov: np.ndarray
    last_tti: int = -1


@dataclass
class Measurement:
    an_id: int
    ue_id: int
    tti: int
    azimuth: float
    elevation: float
    az_var: float
    el_var: float
    toa: float | None
    toa_var: float | None
    quality: float
    is_los: bool = True


@dataclass
class UpdateInfo:
    updated: bool
    nis: float = np.nan
    df: int = 0
    reason: str = ""


def _require_spd(cov: np.ndarray):
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise StateCorruptedError("covariance not SPD") from exc


def is_spd(cov: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(cov)
        return True
    except np.linalg.LinAlgError:
        return False


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def _cv_matrices(n_angles: int, dt: float, accel_std: float):
    n = 2 * n_angles
    F = np.eye(n)
    F[:n_angles, n_angles:] = dt * np.eye(n_angles)
    q = accel_std**2
    Q = np.zeros((n, n))
    for i in range(n_angles):
        Q[i, i] = q * dt**4 / 4
        Q[i, n_angles + i] = q * dt**3 / 2
        Q[n_angles + i, i] = q * dt**3 / 2
        Q[n_angles + i, n_angles + i] = q * dt**2
    return F, Q


def directional_ekf_predict(state: DirectionalState, dt: float,
                            accel_std: float = TrackingConfig.angular_accel_std) -> DirectionalState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    _require_spd(state.cov)
    F, Q = _cv_matrices(state.n_angles, dt, accel_std)
    mean = F @ state.mean
    cov = F @ state.cov @ F.T + Q
    out = DirectionalState(mean=mean, cov=0.5 * (cov + cov.T), last_tti=state.last_tti)
    out.wrap()
    return out


# ---------------------------------------------------------------------------
# Snapshot measurement models
# ---------------------------------------------------------------------------

def arrival_model(array: ArrayGeometry, frequency: float, conjugate: bool = False):
    """Single-end model: per-polarization-block steering columns.

    Returns a builder mapping (az, el) -> (A, [dA_daz, dA_del]) where A has
    shape (n_ports, polarization_count).
    """
    n = array.n_elements
    p = array.polarization_count

    def build(angles):
        az, el = float(angles[0]), float(angles[1])
        a = steering_vector(array, az, el, frequency)[:n]
        daz, del_ = steering_jacobian(array, az, el, frequency)
        daz, del_ = daz[:n], del_[:n]
        if conjugate:
            a, daz, del_ = np.conj(a), np.conj(daz), np.conj(del_)
        A = np.zeros((p * n, p), dtype=complex)
        dAz = np.zeros_like(A)
        dEl = np.zeros_like(A)
        for q in range(p):
            A[q * n:(q + 1) * n, q] = a
            dAz[q * n:(q + 1) * n, q] = daz
            dEl[q * n:(q + 1) * n, q] = del_
        return A, [dAz, dEl]

    return build


def multicarrier_arrival_model(array: ArrayGeometry, frequency: float, n_blocks: int,
                               conjugate: bool = False):
    """Arrival model over several stacked subcarrier snapshots.

    Each subcarrier carries its own nuisance weights (the channel phase varies
    across the band); the steering geometry is evaluated at the carrier.
    """
    single = arrival_model(array, frequency, conjugate)
    n_ports = array.n_elements * array.polarization_count
    p = array.polarization_count

    def build(angles):
        A1, dA1 = single(angles)
        A = np.zeros((n_blocks * n_ports, n_blocks * p), dtype=complex)
        dAs = [np.zeros_like(A) for _ in range(len(dA1))]
        for k in range(n_blocks):
            rows = slice(k * n_ports, (k + 1) * n_ports)
            cols = slice(k * p, (k + 1) * p)
            A[rows, cols] = A1
            for i, d in enumerate(dA1):
                dAs[i][rows, cols] = d
        return A, dAs

    return build


def joint_model(an_array: ArrayGeometry, ue_array: ArrayGeometry, frequency: float,
                port_phases: np.ndarray):
    """Network-centric model over per-UE-port subcarriers.

    The stacked measurement holds one AN snapshot per UE port (polarization q,
    element m), each carrying a known delay phase from the current pseudo-ToA
    estimate. Nuisance columns are the polarization-pair weights. Angle order
    is (az_an, el_an, az_ue, el_ue); the node side enters conjugated because
    the stack models uplink reception.
    """
    n_an, p_an = an_array.n_elements, an_array.polarization_count
    n_ue, p_ue = ue_array.n_elements, ue_array.polarization_count
    m_rows = p_ue * n_ue * p_an * n_an

    def build(angles):
        az_an, el_an, az_ue, el_ue = [float(v) for v in angles]
        a_an = np.conj(steering_vector(an_array, az_an, el_an, frequency)[:n_an])
        dan_az, dan_el = steering_jacobian(an_array, az_an, el_an, frequency)
        dan_az, dan_el = np.conj(dan_az[:n_an]), np.conj(dan_el[:n_an])
        a_ue = steering_vector(ue_array, az_ue, el_ue, frequency)[:n_ue]
        due_az, due_el = steering_jacobian(ue_array, az_ue, el_ue, frequency)
        due_az, due_el = due_az[:n_ue], due_el[:n_ue]

        def stack(an_vec, ue_vec):
            out = np.zeros((m_rows, p_an * p_ue), dtype=complex)
            for q in range(p_ue):
                for m in range(n_ue):
                    j = q * n_ue + m
                    ph = port_phases[j] * ue_vec[m]
                    base = j * p_an * n_an
                    for p in range(p_an):
                        col = p * p_ue + q
                        out[base + p * n_an: base + (p + 1) * n_an, col] = ph * an_vec
            return out

        A = stack(a_an, a_ue)
        return A, [stack(dan_az, a_ue), stack(dan_el, a_ue),
                   stack(a_an, due_az), stack(a_an, due_el)]

    return build


def stack_joint_snapshot(snapshots: np.ndarray) -> np.ndarray:
    """Flatten per-UE-port AN snapshots (n_ue_ports, an_ports) into a vector."""
    return np.asarray(snapshots).reshape(-1)


# ---------------------------------------------------------------------------
# Snapshot EKF update
# ---------------------------------------------------------------------------

def snapshot_ekf_update(state: DirectionalState, y: np.ndarray, model_builder,
                        noise_var: float, adaptive: bool = True
                        ) -> tuple[DirectionalState, UpdateInfo]:
    """Conditional EKF update with the nuisance path weight fit per update.

    With ``adaptive`` the per-port noise variance is raised to the post-fit
    residual level whenever that clearly exceeds the thermal floor, so that
    un-modeled scattering does not make the filter overconfident.
    """
    _require_spd(state.cov)
    na = state.n_angles
    angles = state.mean[:na]
    A, dAs = model_builder(angles)
    b, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ b
    # project the Jacobian off span(A): the weight fit absorbs any innovation
    # component inside it, so only the complement carries angle information
    Q, _ = np.linalg.qr(A)
    Hc = np.stack([dA @ b for dA in dAs], axis=1)
    Hc -= Q @ (Q.conj().T @ Hc)

    if adaptive:
        sigma2_hat = float(np.linalg.norm(resid) ** 2 / max(y.size - A.shape[1], 1))
        if sigma2_hat > 2.0 * noise_var:
            noise_var = sigma2_hat

    z = np.concatenate([resid.real, resid.imag])
    Ha = np.vstack([Hc.real, Hc.imag])  # (2m, na)
    r0 = noise_var / 2.0
    P = state.cov
    Paa = P[:na, :na]
    T = Ha.T @ Ha
    try:
        M = np.linalg.inv(np.linalg.inv(Paa) + T / r0)
    except np.linalg.LinAlgError:
        return state, UpdateInfo(False, reason="singular innovation covariance")
    HtSinv = (np.eye(na) - T @ M / r0) @ Ha.T / r0  # (na, 2m)
    K = P[:, :na] @ HtSinv
    mean = state.mean + K @ z

    n = state.mean.size
    KH = np.zeros((n, n))
    KH[:, :na] = K @ Ha
    IKH = np.eye(n) - KH
    cov = IKH @ P @ IKH.T + r0 * (K @ K.T)
    cov = 0.5 * (cov + cov.T)
    if not is_spd(cov):
        return state, UpdateInfo(False, reason="update produced non-SPD covariance")

    hz = Ha.T @ z
    nis = float(z @ z / r0 - hz @ M @ hz / r0**2)
    df = z.size - 2 * A.shape[1]
    quality = float(10.0 * np.log10(max(np.linalg.norm(A @ b) ** 2, 1e-30)
                                    / max(np.linalg.norm(resid) ** 2, 1e-30)))
    out = DirectionalState(mean=mean, cov=cov, last_tti=state.last_tti)
    out.wrap()
    info = UpdateInfo(True, nis=nis, df=df)
    info.quality = quality
    return out, info


def directional_ekf_update(state: DirectionalState, snapshot: np.ndarray,
                           array: ArrayGeometry, frequency: float, noise_power: float,
                           conjugate: bool = False):
    """Arrival-angle update from a single-subcarrier snapshot of one array."""
    return snapshot_ekf_update(state, snapshot,
                               arrival_model(array, frequency, conjugate), noise_power)


def network_centric_ekf_step(state: DirectionalState, port_snapshots: np.ndarray,
                             an_array: ArrayGeometry, ue_array: ArrayGeometry,
                             frequency: float, port_phases: np.ndarray,
                             noise_power: float, dt: float | None = None,
                             accel_std: float = TrackingConfig.angular_accel_std):
    """Joint arrival/departure update; optionally predicts over ``dt`` first."""
    if dt is not None:
        state = directional_ekf_predict(state, dt, accel_std)
    y = stack_joint_snapshot(port_snapshots)
    model = joint_model(an_array, ue_array, frequency, port_phases)
    return snapshot_ekf_update(state, y, model, noise_power)


# ---------------------------------------------------------------------------
# Acquisition
# ---------------------------------------------------------------------------

def doa_grid_init(y: np.ndarray, array: ArrayGeometry, frequency: float,
                  conjugate: bool = False, coarse_deg: float = 5.0,
                  refine_deg: float = 1.0, el_center: float = np.pi / 2,
                  el_halfspan: float = np.deg2rad(40.0), accept=None):
    """Two-stage grid search maximizing the projection of y onto the model.

    A planar ring of elements cannot tell a direction from its mirror image
    about the array plane, so callers pass ``accept(az, el)`` encoding the
    deployment prior (nodes look down at devices, devices see nodes above
    their own horizon).
    """
    n = array.n_elements
    p = array.polarization_count
    blocks = [y[q * n:(q + 1) * n] for q in range(p)]

    def score(az, el):
        a = steering_vector(array, az, el, frequency)[:n]
        if conjugate:
            a = np.conj(a)
        na2 = float(np.vdot(a, a).real)
        return sum(abs(np.vdot(a, blk)) ** 2 for blk in blocks) / na2

    def sweep(az_grid, el_grid):
        best, best_az, best_el = -1.0, 0.0, el_center
        for el in el_grid:
            for az in az_grid:
                if accept is not None and not accept(az, el):
                    continue
                s = score(az, el)
                if s > best:
                    best, best_az, best_el = s, az, el
        return best_az, best_el

    step = np.deg2rad(coarse_deg)
    az0, el0 = sweep(np.arange(-np.pi, np.pi, step),
                     np.arange(el_center - el_halfspan, el_center + el_halfspan + step, step))
    fine = np.deg2rad(refine_deg)
    az1, el1 = sweep(az0 + np.arange(-step, step + fine, fine),
                     np.clip(el0 + np.arange(-step, step + fine, fine), 1e-3, np.pi - 1e-3))
    return wrap_angle(az1), float(np.clip(el1, 1e-3, np.pi - 1e-3))


def initial_directional_state(az: float, el: float, refine_deg: float,
                              tti: int = -1, rate_std: float = 0.5) -> DirectionalState:
    std = np.deg2rad(refine_deg) * 2.0
    mean = np.array([az, el, 0.0, 0.0])
    cov = np.diag([std**2, std**2, rate_std**2, rate_std**2])
    return DirectionalState(mean=mean, cov=cov, last_tti=tti)


# ---------------------------------------------------------------------------
# Pseudo-ToA tracking
# ---------------------------------------------------------------------------

def phase_ramp_toa(series: np.ndarray, freqs: np.ndarray, noise_var: float):
    """Weighted LS fit of the unwrapped cross-subcarrier phase ramp.

    Returns (pseudo_toa, variance, quality_db). ``series`` is the spatially
    combined complex value per subcarrier, ``freqs`` the baseband offsets.
    The reported variance is the larger of the thermal-noise bound and the
    empirical fit-residual level (scattering shows up in the latter).
    """
    power = np.abs(series) ** 2
    if not np.any(power > 0):
        raise ValueError("all-zero series")
    n = len(freqs)
    df = float(np.median(np.diff(freqs)))
    # coarse slope from adjacent-subcarrier phase increments (no unwrap chain),
    # then a safe small-residual linear fit after detrending
    inc = series[1:] * np.conj(series[:-1])
    step0 = float(np.angle(np.sum(inc)))
    detrended = series * np.exp(-1j * step0 * (freqs - freqs[0]) / df)
    phases = np.unwrap(np.angle(detrended))
    w = power / power.sum()
    fbar = float(w @ freqs)
    pbar = float(w @ phases)
    denom = float(w @ (freqs - fbar) ** 2)
    slope_res = float(w @ ((freqs - fbar) * (phases - pbar))) / denom
    slope = step0 / df + slope_res
    toa = -slope / (2.0 * np.pi)

    snr = max(power.mean() / noise_var, 1e-6)
    sigma_phi2 = 1.0 / (2.0 * snr)
    resid = phases - pbar - slope_res * (freqs - fbar)
    sigma_phi2_emp = float(w @ resid**2) * n / max(n - 2, 1)
    var_slope = max(sigma_phi2, sigma_phi2_emp) / (n * denom)
    var = var_slope / (2.0 * np.pi) ** 2
    return toa, var, float(10.0 * np.log10(snr))


def toa_ekf_predict(state: ToaState, dt: float, rate_noise: float) -> ToaState:
    _require_spd(state.cov)
    F = np.array([[1.0, dt], [0.0, 1.0]])
    Q = rate_noise * np.array([[dt**3 / 3, dt**2 / 2], [dt**2 / 2, dt]])
    cov = F @ state.cov @ F.T + Q
    return ToaState(mean=F @ state.mean, cov=0.5 * (cov + cov.T), last_tti=state.last_tti)


def toa_ekf_step(state: ToaState | None, snapshot: np.ndarray, combiner: np.ndarray,
                 numerology: Numerology, subcarriers, noise_var: float,
                 cfg: TrackingConfig, tti: int, clock_truth_free: bool = True,
                 truth_clock_term: float = 0.0):
    """One pilot-epoch ToA update from an (n_sc, ports) snapshot.

    With ``clock_truth_free`` False the known clock contribution is removed
    from the raw measurement before filtering (diagnostic mode only).
    """
    freqs = subcarrier_offsets(numerology, subcarriers)
    w = combiner / np.linalg.norm(combiner)
    series = snapshot @ np.conj(w)
    raw, var, quality = phase_ramp_toa(series, freqs, noise_var)
    if not clock_truth_free:
        raw -= truth_clock_term
    bw = max(freqs.max() - freqs.min(), numerology.subcarrier_spacing)
    var += (cfg.multipath_toa_std * cfg.multipath_toa_ref_bw / bw) ** 2

    # pseudo-ToA is observable only modulo the subcarrier-spacing alias period;
    # innovations are wrapped onto the branch the filter was initialized on
    ambiguity = 1.0 / numerology.subcarrier_spacing
    if state is None:
        mean = np.array([raw, 0.0])
        cov = np.diag([var * 10.0, (3e-5) ** 2])
        return ToaState(mean, cov, last_tti=tti), UpdateInfo(True, df=1), raw, var
    if np.sqrt(var) > ambiguity / 6.0:
        state_out = state
        if state.last_tti < tti:
            dt = (tti - state.last_tti) * numerology.tti_duration
            state_out = toa_ekf_predict(state, dt, cfg.toa_rate_noise)
            state_out.last_tti = state.last_tti
        return state_out, UpdateInfo(False, reason="phase ambiguity window exceeded"), raw, var
    dt = (tti - state.last_tti) * numerology.tti_duration
    pred = toa_ekf_predict(state, dt, cfg.toa_rate_noise) if dt > 0 else state
    innov = raw - pred.mean[0]
    innov -= round(innov / ambiguity) * ambiguity
    S = pred.cov[0, 0] + var
    nis = innov**2 / S
    if nis > CHI2_GATE_1DF:
        return pred, UpdateInfo(False, nis=nis, df=1, reason="gated"), raw, var
    K = pred.cov[:, 0] / S
    mean = pred.mean + K * innov
    IKH = np.eye(2) - np.outer(K, [1.0, 0.0])
    cov = IKH @ pred.cov @ IKH.T + var * np.outer(K, K)
    out = ToaState(mean, 0.5 * (cov + cov.T), last_tti=tti)
    return out, UpdateInfo(True, nis=nis, df=1), raw, var
