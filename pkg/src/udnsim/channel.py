"""Parametric geometric link channel.

Per link the downlink matrix at subcarrier k (offset f_k from the carrier) is

    H_k = g * ( sqrt(K/(K+1)) * kron(P, a_ue a_an^H) * exp(-j*2*pi*(f_c+f_k)*tau)
                + sqrt(1/(K+1)) * D_k )

with g the pathloss amplitude, P the 2x2 polarization coupling, a_* single-
polarization steering vectors toward the true bearings, tau the geometric
delay, and D_k a sum of a few delayed scattered taps with an exponential
power-delay profile, per-tap Doppler rotation inside a coherence epoch, and
tap signatures normalized so the LoS/diffuse power ratio equals K exactly in
expectation. Uplink matrices are the transposes (TDD reciprocity). Everything
is a pure function of (link, epoch, master seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .antenna import SPEED_OF_LIGHT, polarization_mixing, steering_vector
from .geometry import bearing_in_frame
from .scenario import AnSite, Numerology, UeTrack

# substream tags for seed derivation
_TAG_TAPS = 1
_TAG_LOS = 2
_TAG_NOISE = 3


@dataclass(frozen=True)
class ChannelConfig:
    rice_k_db: float = 10.0
    pathloss_breakpoint: float = 10.0
    los_exponent: float = 2.8
    nlos_exponent: float = 3.5
    nlos_excess_db: float = 15.0
    los_range_full: float = 25.0   # p_los = 1 inside this distance
    los_decay: float = 34.76       # gives p_los(35 m) = 0.75
    n_taps: int = 6
    delay_spread: float = 100e-9
    coherence_time: float = 10e-3
    los_coherence_time: float = 2.0
    cross_polar_db: float = -20.0
    an_noise_figure_db: float = 5.0
    ue_noise_figure_db: float = 9.0


@dataclass
class LinkState:
    an_id: int
    ue_id: int
    tti: int
    az_an: float
    el_an: float
    az_ue: float
    el_ue: float
    delay: float
    distance: float
    rice_k_db: float
    is_los: bool
    pathloss_db: float


@dataclass
class ChannelMatrix:
    matrices: np.ndarray  # (n_sc, ue_ports, an_ports), downlink orientation
    subcarriers: np.ndarray
    tti: int

    def uplink(self) -> np.ndarray:
        return np.swapaxes(self.matrices, -1, -2)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * np.log10(watt) + 30.0


def thermal_noise_w(bandwidth: float, noise_figure_db: float = 0.0) -> float:
    """Receiver noise power over ``bandwidth`` (kT = -174 dBm/Hz)."""
    return dbm_to_watt(-174.0 + 10.0 * np.log10(bandwidth) + noise_figure_db)


def subcarrier_offsets(numerology: Numerology, subcarriers) -> np.ndarray:
    """Baseband frequency offsets of subcarrier indices (band-centered)."""
    k = np.asarray(subcarriers)
    return (k - numerology.n_subcarriers / 2.0) * numerology.subcarrier_spacing


class ChannelModel:
    """Deterministic channel synthesis with per-epoch substreams."""

    def __init__(self, numerology: Numerology, config: ChannelConfig | None = None,
                 master_seed: int = 0):
        self.numerology = numerology
        self.config = config or ChannelConfig()
        self.master_seed = master_seed
        self._tap_cache = {}
        self._polmix = polarization_mixing(self.config.cross_polar_db)

    # -- seed plumbing ------------------------------------------------------

    def _rng(self, *keys) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence((self.master_seed,) + tuple(keys)))

    def fading_epoch(self, tti: int) -> int:
        return int(tti * self.numerology.tti_duration / self.config.coherence_time)

    def los_epoch(self, tti: int) -> int:
        return int(tti * self.numerology.tti_duration / self.config.los_coherence_time)

    # -- large-scale terms --------------------------------------------------

    def pathloss_db(self, distance: float, is_los: bool) -> float:
        cfg = self.config
        d = max(distance, 1.0)
        fspl_ref = 20.0 * np.log10(4.0 * np.pi * min(d, cfg.pathloss_breakpoint)
                                   * self.numerology.carrier_frequency / SPEED_OF_LIGHT)
        exponent = cfg.los_exponent if is_los else cfg.nlos_exponent
        pl = fspl_ref + 10.0 * exponent * np.log10(max(d / cfg.pathloss_breakpoint, 1.0))
        if not is_los:
            pl += cfg.nlos_excess_db
        return pl

    def los_probability(self, distance: float) -> float:
        cfg = self.config
        return float(min(1.0, np.exp(-(distance - cfg.los_range_full) / cfg.los_decay)))

    def link_geometry(self, an: AnSite, ue: UeTrack, tti: int) -> LinkState:
        p_ue = ue.positions[tti]
        az_an, el_an, dist = bearing_in_frame(an.position, p_ue, an.rotation())
        az_ue, el_ue, _ = bearing_in_frame(p_ue, an.position, ue.rotation(tti))
        draw = self._rng(an.id, ue.id, self.los_epoch(tti), _TAG_LOS).uniform()
        is_los = bool(draw < self.los_probability(dist))
        return LinkState(
            an_id=an.id, ue_id=ue.id, tti=tti,
            az_an=az_an, el_an=el_an, az_ue=az_ue, el_ue=el_ue,
            delay=dist / SPEED_OF_LIGHT, distance=dist,
            rice_k_db=self.config.rice_k_db, is_los=is_los,
            pathloss_db=self.pathloss_db(dist, is_los),
        )

    # -- small-scale synthesis ----------------------------------------------

    def _taps(self, an: AnSite, ue: UeTrack, link: LinkState, epoch: int):
        key = (an.id, ue.id, epoch)
        hit = self._tap_cache.get(key)
        if hit is not None:
            return hit
        cfg = self.config
        rng = self._rng(an.id, ue.id, epoch, _TAG_TAPS)
        excess = np.sort(rng.exponential(cfg.delay_spread, cfg.n_taps))
        powers = np.exp(-excess / cfg.delay_spread)
        powers /= powers.sum()
        gains = (rng.standard_normal(cfg.n_taps) + 1j * rng.standard_normal(cfg.n_taps)) / np.sqrt(2.0)
        speed = float(np.linalg.norm(ue.velocities[min(link.tti, ue.n_samples - 1)]))
        f_doppler = speed * self.numerology.carrier_frequency / SPEED_OF_LIGHT
        dopplers = f_doppler * np.cos(rng.uniform(0.0, 2.0 * np.pi, cfg.n_taps))

        fc = self.numerology.carrier_frequency
        n_ue, n_an = ue.array.n_elements, an.array.n_elements
        sig_ue = np.empty((cfg.n_taps, n_ue), dtype=complex)
        sig_an = np.empty((cfg.n_taps, n_an), dtype=complex)
        az_ue = rng.uniform(0.0, 2.0 * np.pi, cfg.n_taps)
        az_an = rng.uniform(0.0, 2.0 * np.pi, cfg.n_taps)
        el_sigma = np.deg2rad(10.0)
        el_ue = np.clip(link.el_ue + el_sigma * rng.standard_normal(cfg.n_taps), 0.05, np.pi - 0.05)
        el_an = np.clip(link.el_an + el_sigma * rng.standard_normal(cfg.n_taps), 0.05, np.pi - 0.05)
        for l in range(cfg.n_taps):
            sig_ue[l] = steering_vector(ue.array, az_ue[l], el_ue[l], fc)[:n_ue]
            sig_an[l] = steering_vector(an.array, az_an[l], el_an[l], fc)[:n_an]
        taps = (excess, powers, gains, dopplers, sig_ue, sig_an)
        self._tap_cache[key] = taps
        if len(self._tap_cache) > 4096:
            self._tap_cache.pop(next(iter(self._tap_cache)))
        return taps

    def synthesize(self, an: AnSite, ue: UeTrack, tti: int, subcarriers,
                   link: LinkState | None = None) -> ChannelMatrix:
        """Downlink matrices (n_sc, ue_ports, an_ports) at one TTI."""
        link = link or self.link_geometry(an, ue, tti)
        cfg = self.config
        num = self.numerology
        subcarriers = np.atleast_1d(np.asarray(subcarriers, dtype=int))
        if subcarriers.min() < 0 or subcarriers.max() >= num.n_subcarriers:
            raise ValueError("subcarrier index outside the configured band")
        f_k = subcarrier_offsets(num, subcarriers)
        fc = num.carrier_frequency
        n_ue, n_an = ue.array.n_elements, an.array.n_elements

        a_ue = steering_vector(ue.array, link.az_ue, link.el_ue, fc)[:n_ue]
        a_an = steering_vector(an.array, link.az_an, link.el_an, fc)[:n_an]
        los_norm = np.linalg.norm(a_ue) * np.linalg.norm(a_an)

        epoch = self.fading_epoch(tti)
        excess, powers, gains, dopplers, sig_ue, sig_an = self._taps(an, ue, link, epoch)
        t_in_epoch = tti * num.tti_duration - epoch * cfg.coherence_time

        # diffuse block, normalized to the LoS signature norm
        diffuse = np.zeros((len(subcarriers), n_ue, n_an), dtype=complex)
        for l in range(cfg.n_taps):
            scale = np.sqrt(powers[l]) * los_norm / (
                np.linalg.norm(sig_ue[l]) * np.linalg.norm(sig_an[l]))
            c_l = gains[l] * np.exp(2j * np.pi * dopplers[l] * t_in_epoch) * scale
            phase = np.exp(-2j * np.pi * (fc + f_k) * (link.delay + excess[l]))
            diffuse += (c_l * phase)[:, None, None] * np.einsum(
                "m,n->mn", sig_ue[l], np.conj(sig_an[l]))

        amp = 10.0 ** (-link.pathloss_db / 20.0)
        if link.is_los:
            k_lin = np.inf if np.isinf(link.rice_k_db) else 10.0 ** (link.rice_k_db / 10.0)
            los_w = 1.0 if np.isinf(k_lin) else np.sqrt(k_lin / (k_lin + 1.0))
            dif_w = 0.0 if np.isinf(k_lin) else np.sqrt(1.0 / (k_lin + 1.0))
            los_phase = np.exp(-2j * np.pi * (fc + f_k) * link.delay)
            base = los_w * los_phase[:, None, None] * np.einsum("m,n->mn", a_ue, np.conj(a_an))
            base = base + dif_w * diffuse
        else:
            base = diffuse

        pol = self._polmix[:ue.array.polarization_count, :an.array.polarization_count]
        full = np.einsum("pq,kmn->kpmqn", pol, base).reshape(
            len(subcarriers), pol.shape[0] * n_ue, pol.shape[1] * n_an)
        return ChannelMatrix(matrices=amp * full, subcarriers=subcarriers, tti=tti)

    def noise_rng(self, *keys) -> np.random.Generator:
        return self._rng(_TAG_NOISE, *keys)


@dataclass
class PilotTx:
    """One transmitter's contribution to a received pilot snapshot."""

    matrices: np.ndarray  # (n_sc, n_rx, n_tx) toward the receiver of interest
    weights: np.ndarray   # (n_tx,) transmit weights, amplitude included
    desired: bool = True


def apply_timing_offset(matrices: np.ndarray, f_k: np.ndarray, seconds: float) -> np.ndarray:
    """Phase-ramp a per-subcarrier channel by a clock/timing offset."""
    return matrices * np.exp(-2j * np.pi * f_k * seconds)[:, None, None]


def received_pilot(transmitters: list, noise_power_w: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Sum transmitter contributions plus circular complex noise.

    Returns an (n_sc, n_rx) snapshot. Exactly one transmitter may be marked
    desired; interferers simply add on the shared subcarriers.
    """
    if sum(1 for tx in transmitters if tx.desired) > 1:
        raise ValueError("pilot allocation has colliding desired transmitters")
    if not transmitters:
        raise ValueError("no transmitters")
    first = transmitters[0].matrices
    y = np.zeros((first.shape[0], first.shape[1]), dtype=complex)
    for tx in transmitters:
        if tx.matrices.shape[0] != y.shape[0] or tx.matrices.shape[1] != y.shape[1]:
            raise ValueError("inconsistent pilot allocation shapes")
        y += np.einsum("kmn,n->km", tx.matrices, tx.weights)
    if noise_power_w > 0:
        scale = np.sqrt(noise_power_w / 2.0)
        y = y + scale * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return y
